"""HTTP serving of generated warm-start images.

Implements the optimizer's warm-start endpoint contract: POST JSON
``{"cluster_id": int, "feature": [50 floats], "seed": optional int}`` returns
``{"pbm": <P1 text>, "cluster_id": ..., "seed": ...}``.  Requests are
stateless; a lock around inference keeps identical requests byte-identical
under concurrency.  Malformed requests get a 400.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .dataset import render_pbm
from .generate import generate_images
from .train import load_generator


def make_server(checkpoint, port: int = 0, default_seed: int = 0) -> ThreadingHTTPServer:
    gen = load_generator(checkpoint)
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
                doc = json.loads(self.rfile.read(length))
                feature = doc["feature"]
                cluster_id = doc.get("cluster_id")
                seed = int(doc.get("seed", default_seed))
                if not isinstance(feature, list) or len(feature) != gen.feature_len:
                    raise ValueError(f"feature must be a list of {gen.feature_len} numbers")
                feature = [float(v) for v in feature]
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                body = json.dumps({"error": str(exc)}).encode()
                self.send_response(400)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
            with lock:
                (bits,) = generate_images(gen, feature, 1, seed=seed)
            body = json.dumps({"pbm": render_pbm(bits), "cluster_id": cluster_id,
                               "seed": seed}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer(("127.0.0.1", port), Handler)


def serve(checkpoint, port: int, default_seed: int = 0) -> None:
    server = make_server(checkpoint, port, default_seed)
    print(f"serving warm-start images on port {server.server_port}")
    server.serve_forever()
