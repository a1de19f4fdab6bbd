/**
 * DOM rendering of the console state: a grid view, status/assignment
 * panels, the metrics strip, and the banner. `describeAssignment` and
 * `gridGlyphs` are pure so the view logic is testable without a DOM.
 */

import { ConsoleState, inputMode } from "./console.js";

export function describeAssignment(state: ConsoleState): string {
  if (state.connection !== "connected") {
    return "disconnected";
  }
  if (state.assignment === null) {
    const seat = state.humanId !== null && state.seats !== null
      ? `seat ${state.humanId + 1}/${state.seats}`
      : "seat ?";
    return `${seat}: waiting for an assignment`;
  }
  const a = state.assignment;
  const verb = a.intervention === "hard_reset" ? "HARD RESET" : "teleoperate";
  const lock = state.answered ? " [answer sent]" : "";
  return `t=${a.t}: ${verb} robot ${a.robot_id} (min ${a.steps_remaining} more steps)${lock}`;
}

export type Glyph = "free" | "fault" | "robot" | "robot-fault" | "goal";

export function gridGlyphs(state: ConsoleState): Glyph[][] | null {
  if (state.env === null) {
    return null;
  }
  const { width, height, fault_cells } = state.env;
  const grid: Glyph[][] = Array.from({ length: height }, () =>
    Array.from({ length: width }, () => "free" as Glyph),
  );
  for (const [x, y] of fault_cells) {
    grid[y][x] = "fault";
  }
  const obs = state.observation;
  if (obs !== null && state.assignment !== null) {
    if (obs.goal) {
      const [gx, gy] = obs.goal;
      grid[gy][gx] = "goal";
    }
    const [x, y] = obs.cell;
    grid[y][x] = grid[y][x] === "fault" ? "robot-fault" : "robot";
  }
  return grid;
}

const GLYPH_CLASS: Record<Glyph, string> = {
  free: "cell",
  fault: "cell fault",
  robot: "cell robot",
  "robot-fault": "cell robot fault",
  goal: "cell goal",
};

export function render(state: ConsoleState, root: Document): void {
  const status = root.getElementById("status")!;
  status.textContent = describeAssignment(state);
  status.className = `status ${state.connection}${state.paused ? " paused" : ""}`;

  const banner = root.getElementById("banner")!;
  banner.textContent = state.banner ?? "";
  banner.style.display = state.banner ? "block" : "none";

  const mode = root.getElementById("mode")!;
  const current = inputMode(state);
  mode.textContent =
    current === "teleop"
      ? "arrow keys push the robot (up/down/left/right)"
      : current === "hard_reset"
        ? "press Enter to confirm this reset step"
        : "inputs locked";

  const metrics = root.getElementById("metrics")!;
  if (state.metrics) {
    const m = state.metrics;
    metrics.textContent =
      `t=${m.t}  successes=${m.cum_successes}  resets=${m.cum_hard_resets}  ` +
      `idle=${m.cum_idle_time}  human=${m.cum_human_steps}  rohe=${m.rohe.toFixed(3)}`;
  } else {
    metrics.textContent = "no fleet metrics yet";
  }

  const board = root.getElementById("board")!;
  const glyphs = gridGlyphs(state);
  board.innerHTML = "";
  if (glyphs === null) {
    return;
  }
  board.style.gridTemplateColumns = `repeat(${glyphs[0].length}, 26px)`;
  for (const row of glyphs) {
    for (const glyph of row) {
      const cell = root.createElement("div");
      cell.className = GLYPH_CLASS[glyph];
      board.appendChild(cell);
    }
  }
}
