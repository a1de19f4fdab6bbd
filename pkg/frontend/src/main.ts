/**
 * Browser entry point: wires the WebSocket, the keyboard, and the reducer.
 * Server URL and token come from the form (pre-filled from ?server= and
 * ?token= query parameters).
 */

import { ConsoleState, initialState, reduce, ConsoleEvent } from "./console.js";
import { helloFor, parseServerMsg } from "./protocol.js";
import { render } from "./render.js";

let state: ConsoleState = initialState();
let socket: WebSocket | null = null;

function dispatch(event: ConsoleEvent): void {
  const step = reduce(state, event);
  state = step.state;
  for (const msg of step.outbound) {
    socket?.send(JSON.stringify(msg));
  }
  render(state, document);
}

function connect(url: string, token: string): void {
  socket?.close();
  dispatch({ type: "connecting" });
  socket = new WebSocket(url);
  socket.onopen = () => {
    dispatch({ type: "connected" });
    socket?.send(JSON.stringify(helloFor(token)));
  };
  socket.onmessage = (ev) => dispatch({ type: "message", msg: parseServerMsg(String(ev.data)) });
  socket.onclose = () => dispatch({ type: "disconnected" });
  socket.onerror = () => dispatch({ type: "disconnected" });
}

function main(): void {
  const params = new URLSearchParams(location.search);
  const serverInput = document.getElementById("server") as HTMLInputElement;
  const tokenInput = document.getElementById("token") as HTMLInputElement;
  serverInput.value = params.get("server") ?? "ws://127.0.0.1:8711";
  tokenInput.value = params.get("token") ?? "fleet";

  document.getElementById("connect")!.addEventListener("click", () => {
    connect(serverInput.value, tokenInput.value);
  });

  window.addEventListener("keydown", (ev) => {
    if (ev.target === serverInput || ev.target === tokenInput) {
      return;
    }
    if (["ArrowUp", "ArrowDown", "ArrowLeft", "ArrowRight", "Enter"].includes(ev.key)) {
      ev.preventDefault();
      dispatch({ type: "key", key: ev.key });
    }
  });

  render(state, document);
}

main();
