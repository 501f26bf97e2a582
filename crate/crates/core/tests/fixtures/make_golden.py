"""Writes the golden wire-protocol fixture with an encoder independent of the
Rust client.

golden_client.bin  bytes a client sends: hello, one evaluate, shutdown
golden_server.bin  bytes a service sends back: ready, one result
golden.json        the request inputs and the decoded response summary
"""
import json
import struct
from pathlib import Path

RES = 64
VIEWS = 2
HERE = Path(__file__).parent


def frame(header, payload=b""):
    text = json.dumps(header, separators=(",", ":")).encode()
    return struct.pack(">I", len(text)) + text + payload


def image(v):
    return [((r * 7 + c * 3 + v * 11) % 17) / 16 for r in range(RES) for c in range(RES)]


def gradient(v):
    return [((i * 13 + v * 5) % 29 - 14) / 1024 for i in range(RES * RES)]


visible = [[(0, 0), (5, 3), (9, 12)], [(0, 1), (5, 3)]]

hello = {
    "type": "hello",
    "version": 1,
    "resolution": RES,
    "views": VIEWS,
    "patch_size": 32,
    "stride": 16,
    "prompt": "a cactus",
    "base_prompt": "a sphere",
    "weights": {"semantic": 1.0, "vc": 0.5},
    "directional": False,
}

payload = b"".join(struct.pack("<%df" % (RES * RES), *image(v)) for v in range(VIEWS))
for table in visible:
    payload += struct.pack("<I", len(table))
    for vertex, patch in table:
        payload += struct.pack("<II", vertex, patch)

client = frame(hello)
client += frame({"type": "evaluate", "iteration": 3, "payload_bytes": len(payload)}, payload)
client += frame({"type": "shutdown"})

grads = b"".join(struct.pack("<%df" % (RES * RES), *gradient(v)) for v in range(VIEWS))
server = frame({"type": "ready", "version": 1, "feature_layer": "final_token"})
server += frame(
    {"type": "result", "semantic_loss": 0.8125, "vc_loss": 0.03125, "payload_bytes": len(grads)},
    grads,
)

(HERE / "golden_client.bin").write_bytes(client)
(HERE / "golden_server.bin").write_bytes(server)
summary = {
    "iteration": 3,
    "semantic_loss": 0.8125,
    "vc_loss": 0.03125,
    "gradient_sums": [sum(gradient(v)) for v in range(VIEWS)],
    "gradient_abs_sums": [sum(abs(g) for g in gradient(v)) for v in range(VIEWS)],
    "gradient_probe": [[gradient(v)[i] for i in (0, 1, 777, RES * RES - 1)] for v in range(VIEWS)],
    "visible": visible,
}
(HERE / "golden.json").write_text(json.dumps(summary, indent=1) + "\n")
