/**
 * Console state machine: everything the UI knows, as a pure reducer.
 *
 * Events (server messages, key presses, connection changes) map to a new
 * state plus any outbound messages. The reducer enforces the safety rules
 * the gateway counts on:
 *
 * - exactly one answer per (assignment, timestep): inputs lock the moment
 *   an answer is emitted and re-arm only on the next offer (or on a
 *   retryable error such as `invalid_action`);
 * - answers always echo the timestep of the offer currently on screen, so
 *   a stale answer cannot be produced by the UI at all;
 * - a malformed message only raises a banner, the session stays alive.
 */

import {
  AssignmentOfferMsg,
  ClientMsg,
  EnvInfo,
  Malformed,
  MetricsTickMsg,
  ObservationMsg,
  ServerMsg,
} from "./protocol.js";

export type InputMode = "teleop" | "hard_reset" | "idle";

/** Arrow keys map to the environment's action indices in this fixed order. */
export const KEY_ACTIONS: Record<string, number> = {
  ArrowUp: 0,
  ArrowDown: 1,
  ArrowLeft: 2,
  ArrowRight: 3,
};

const RETRYABLE_ERRORS = new Set(["invalid_action", "stale", "expected_action", "expected_ack"]);

export interface ConsoleState {
  connection: "disconnected" | "connecting" | "connected";
  humanId: number | null;
  seats: number | null;
  env: EnvInfo | null;
  assignment: AssignmentOfferMsg | null;
  observation: ObservationMsg | null;
  answered: boolean;
  metrics: MetricsTickMsg | null;
  paused: boolean;
  banner: string | null;
}

export type ConsoleEvent =
  | { type: "connecting" }
  | { type: "connected" }
  | { type: "disconnected" }
  | { type: "message"; msg: ServerMsg | Malformed }
  | { type: "key"; key: string };

export interface Step {
  state: ConsoleState;
  outbound: ClientMsg[];
}

export function initialState(): ConsoleState {
  return {
    connection: "disconnected",
    humanId: null,
    seats: null,
    env: null,
    assignment: null,
    observation: null,
    answered: false,
    metrics: null,
    paused: false,
    banner: null,
  };
}

export function inputMode(state: ConsoleState): InputMode {
  if (state.connection !== "connected" || state.assignment === null || state.answered) {
    return "idle";
  }
  return state.assignment.intervention;
}

function idle(state: ConsoleState): Step {
  return { state, outbound: [] };
}

export function reduce(state: ConsoleState, event: ConsoleEvent): Step {
  switch (event.type) {
    case "connecting":
      return idle({ ...initialState(), connection: "connecting" });
    case "connected":
      return idle({ ...state, connection: "connected", banner: null });
    case "disconnected":
      return idle({
        ...state,
        connection: "disconnected",
        assignment: null,
        observation: null,
        answered: false,
        paused: false,
        banner: "connection lost; reconnect to continue",
      });
    case "message":
      return onMessage(state, event.msg);
    case "key":
      return onKey(state, event.key);
  }
}

function onMessage(state: ConsoleState, msg: ServerMsg | Malformed): Step {
  switch (msg.kind) {
    case "malformed":
      return idle({ ...state, banner: "ignored a malformed message" });
    case "hello":
      return idle({
        ...state,
        humanId: msg.human_id,
        seats: msg.m_humans,
        env: msg.env,
        banner: null,
      });
    case "assignment_offer":
      return idle({
        ...state,
        assignment: msg,
        answered: false,
        banner: null,
      });
    case "observation":
      return idle({ ...state, observation: msg });
    case "metrics_tick": {
      // a tick past the current offer means the step completed; if no new
      // offer follows, this seat is unassigned for the new timestep
      const finished = state.assignment !== null && msg.t > state.assignment.t;
      return idle({
        ...state,
        metrics: msg,
        assignment: finished ? null : state.assignment,
        observation: finished ? null : state.observation,
        answered: finished ? false : state.answered,
      });
    }
    case "pause":
      return idle({ ...state, paused: true, banner: `paused: ${msg.reason}` });
    case "resume":
      return idle({ ...state, paused: false, banner: null });
    case "error":
      if (RETRYABLE_ERRORS.has(msg.code)) {
        // the offer is still outstanding server-side; unlock and retry
        return idle({ ...state, answered: false, banner: `${msg.code}: ${msg.detail}` });
      }
      return idle({ ...state, banner: `${msg.code}: ${msg.detail}` });
  }
}

function onKey(state: ConsoleState, key: string): Step {
  const mode = inputMode(state);
  if (mode === "idle") {
    const locked = state.assignment !== null && state.answered;
    return idle(locked ? { ...state, banner: "answer already sent; waiting" } : state);
  }
  const assignment = state.assignment!;
  if (mode === "hard_reset") {
    if (key !== "Enter") {
      return idle({ ...state, banner: "hard reset: press Enter to confirm" });
    }
    return {
      state: { ...state, answered: true, banner: null },
      outbound: [{ kind: "hard_reset_ack", t: assignment.t }],
    };
  }
  const action = KEY_ACTIONS[key];
  if (action === undefined) {
    return idle({ ...state, banner: "teleop: use the arrow keys" });
  }
  return {
    state: { ...state, answered: true, banner: null },
    outbound: [{ kind: "action", t: assignment.t, action }],
  };
}
