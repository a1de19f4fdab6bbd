/**
 * Gateway wire protocol: message shapes and a defensive parser.
 *
 * Every message is one JSON document in one WebSocket text frame; see
 * PROTOCOL.md at the repository root for field semantics. The parser never
 * throws on bad input: anything unrecognized comes back as a `malformed`
 * marker so the console can show a banner and keep its session alive.
 */

export const PROTOCOL_VERSION = 1;

export interface EnvInfo {
  name: string;
  width: number;
  height: number;
  fault_cells: [number, number][];
  action_names: string[];
}

export interface HelloMsg {
  kind: "hello";
  version: number;
  human_id: number;
  m_humans: number;
  env: EnvInfo;
}

export interface AssignmentOfferMsg {
  kind: "assignment_offer";
  t: number;
  robot_id: number;
  intervention: "teleop" | "hard_reset";
  steps_remaining: number;
}

export interface ObservationMsg {
  kind: "observation";
  t: number;
  robot_id: number;
  cell: [number, number];
  goal: [number, number] | null;
  episode_step: number;
  fault: boolean;
}

export interface MetricsTickMsg {
  kind: "metrics_tick";
  t: number;
  cum_successes: number;
  cum_hard_resets: number;
  cum_idle_time: number;
  cum_human_steps: number;
  rohe: number;
}

export interface PauseMsg {
  kind: "pause";
  reason: string;
}

export interface ResumeMsg {
  kind: "resume";
}

export interface ErrorMsg {
  kind: "error";
  code: string;
  detail: string;
}

export type ServerMsg =
  | HelloMsg
  | AssignmentOfferMsg
  | ObservationMsg
  | MetricsTickMsg
  | PauseMsg
  | ResumeMsg
  | ErrorMsg;

export interface ClientHello {
  kind: "hello";
  version: number;
  token: string;
}

export interface ActionMsg {
  kind: "action";
  t: number;
  action: number;
}

export interface HardResetAckMsg {
  kind: "hard_reset_ack";
  t: number;
}

export type ClientMsg = ClientHello | ActionMsg | HardResetAckMsg;

export interface Malformed {
  kind: "malformed";
  raw: string;
}

const SERVER_KINDS = new Set([
  "hello",
  "assignment_offer",
  "observation",
  "metrics_tick",
  "pause",
  "resume",
  "error",
]);

function isCell(value: unknown): value is [number, number] {
  return (
    Array.isArray(value) &&
    value.length === 2 &&
    typeof value[0] === "number" &&
    typeof value[1] === "number"
  );
}

/** Parse one frame; structural problems yield a `malformed` marker, never a throw. */
export function parseServerMsg(raw: string): ServerMsg | Malformed {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return { kind: "malformed", raw };
  }
  if (typeof data !== "object" || data === null) {
    return { kind: "malformed", raw };
  }
  const msg = data as Record<string, unknown>;
  if (typeof msg.kind !== "string" || !SERVER_KINDS.has(msg.kind)) {
    return { kind: "malformed", raw };
  }
  switch (msg.kind) {
    case "assignment_offer":
      if (
        typeof msg.t !== "number" ||
        typeof msg.robot_id !== "number" ||
        (msg.intervention !== "teleop" && msg.intervention !== "hard_reset")
      ) {
        return { kind: "malformed", raw };
      }
      break;
    case "observation":
      if (typeof msg.t !== "number" || !isCell(msg.cell)) {
        return { kind: "malformed", raw };
      }
      break;
    case "hello":
      if (typeof msg.human_id !== "number" || typeof msg.version !== "number") {
        return { kind: "malformed", raw };
      }
      break;
    case "error":
      if (typeof msg.code !== "string") {
        return { kind: "malformed", raw };
      }
      break;
  }
  return msg as unknown as ServerMsg;
}

export function helloFor(token: string): ClientHello {
  return { kind: "hello", version: PROTOCOL_VERSION, token };
}
