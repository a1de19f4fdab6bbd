"""Live supervision over the network gateway.

Starts a gateway-mode run on a local port and, by default, drives it with a
scripted console client over a real WebSocket so the demo finishes on its
own. Pass --wait to instead keep the fleet parked until you connect a real
console (the browser UI under frontend/, or anything speaking the protocol
in PROTOCOL.md); simulated time only advances when every assisted robot's
supervisor has answered.
"""

import argparse
import sys
import tempfile
import threading

from fleetlearn import ConsoleClient, RunConfig, build_env, run_experiment, serve


def scripted_console(port, token, answers):
    client = ConsoleClient("127.0.0.1", port, token)
    hello = client.connect()
    print(f"[console] connected as human {hello['human_id']} "
          f"({hello['env']['width']}x{hello['env']['height']} {hello['env']['name']})")
    done = 0
    while done < answers:
        msg = client.recv(timeout=30)
        if msg is None:
            break
        if msg["kind"] == "observation":
            pass  # drained here when a reset ack already answered its offer
        elif msg["kind"] == "assignment_offer":
            if msg["intervention"] == "hard_reset":
                client.send({"kind": "hard_reset_ack", "t": msg["t"]})
                print(f"[console] t={msg['t']}: confirmed hard reset for robot {msg['robot_id']}")
            else:
                # greedy keyboard driver: move along the larger goal delta
                obs = client.recv_kind("observation", timeout=10)
                cell, goal = tuple(obs["cell"]), tuple(obs["goal"])
                dx, dy = goal[0] - cell[0], goal[1] - cell[1]
                if abs(dx) >= abs(dy):
                    action = 3 if dx > 0 else 2
                else:
                    action = 1 if dy > 0 else 0
                client.send({"kind": "action", "t": msg["t"], "action": action})
            done += 1
        elif msg["kind"] == "metrics_tick" and msg["t"] % 10 == 0:
            print(f"[console] t={msg['t']}: successes={msg['cum_successes']} "
                  f"rohe={msg['rohe']:.2f}")
    client.close()
    print(f"[console] answered {done} offers, disconnecting")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, default=8711)
    parser.add_argument("--steps", type=int, default=40)
    parser.add_argument("--wait", action="store_true",
                        help="do not script a console; wait for a real one")
    args = parser.parse_args()

    cfg = RunConfig(
        n_robots=4,
        m_humans=1,
        total_steps=args.steps,
        priority="random",
        random_threshold=0.0,  # ask for help every step so the console stays busy
        offline_pairs=50,
        offline_train_steps=100,
        seeds=(0,),
        output_dir=tempfile.mkdtemp(prefix="fleetlearn-live-"),
        supervisor="gateway",
        gateway_port=args.port,
    )
    gateway = serve("127.0.0.1", args.port, build_env(cfg), cfg.m_humans, cfg.gateway_token)
    print(f"gateway listening on ws://127.0.0.1:{gateway.port} (token {cfg.gateway_token!r})")

    if args.wait:
        print("waiting for a console; fleet time will not advance until one answers")
    else:
        threading.Thread(
            target=scripted_console,
            args=(gateway.port, cfg.gateway_token, cfg.total_steps),
            daemon=True,
        ).start()

    try:
        artifacts = run_experiment(cfg, supervisors=gateway)
    finally:
        gateway.stop()
    rec = artifacts.final_records[0]
    print(f"run complete: successes={rec.cum_successes} human_steps={rec.cum_human_steps} "
          f"rohe={rec.rohe:.2f}")
    print(f"artifacts (replayable with the recorded actions): {artifacts.run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
