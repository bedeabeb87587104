"""Boot the chat service on a throwaway dataset and run the live UI test.

Usage: python scripts/live_test.py  (from the frontend/ directory)

Generates a small dataset, starts `atvc serve --predictor oracle`, derives
an executable instruction for the first gallery scene, then runs the
vitest live suite against the running server.
"""

import json
import os
import socket
import subprocess
import sys
import tempfile
import time
import urllib.request
from pathlib import Path

FRONTEND = Path(__file__).resolve().parents[1]


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for(url: str, timeout: float = 30.0) -> None:
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            with urllib.request.urlopen(url, timeout=2):
                return
        except Exception:
            time.sleep(0.3)
    raise RuntimeError(f"service at {url} did not come up")


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        subprocess.run(
            [sys.executable, "-m", "atvc.cli", "gen", "--scenes", "6",
             "--out", str(data), "--seed", "21"],
            check=True,
        )
        doc = json.loads((data / "annotations.json").read_text())
        first = doc["images"][0]
        sizes = doc["sizes"][0].split(", ")
        colors = doc["colors"][0].split(", ")
        materials = doc["material"][0].split(", ")
        categories = doc["categories"][0].split(", ")
        descs = [
            f"{sizes[o['size_id']]} {colors[o['color_id']]} "
            f"{materials[o['material_id']]} {categories[o['category_id']]}"
            for o in first["objects"]
        ]
        can = (
            f"Please exchange the position of the {descs[0]} and the {descs[1]}."
        )
        port = free_port()
        server = subprocess.Popen(
            [sys.executable, "-m", "atvc.cli", "serve", "--data", str(data),
             "--predictor", "oracle", "--port", str(port)],
        )
        try:
            base = f"http://127.0.0.1:{port}"
            wait_for(f"{base}/api/v1/scenes")
            env = dict(
                os.environ,
                ATVC_SERVICE_URL=base,
                ATVC_LIVE_CAN_INSTRUCTION=can,
            )
            result = subprocess.run(
                ["npx", "vitest", "run", "test/live.test.ts"],
                cwd=FRONTEND,
                env=env,
            )
            return result.returncode
        finally:
            server.terminate()
            server.wait(timeout=10)


if __name__ == "__main__":
    sys.exit(main())
