"""Drive a live annotation server over HTTP.

Boots uvicorn on a loopback port in a daemon thread, then acts as a remote
client: upload an image, create a session, request click-guided inference,
and submit the returned label. Everything crosses the wire as real HTTP,
so this doubles as a smoke test for firewalled deployments.
"""

import argparse
import json
import re
import sys
import tempfile
import threading
import time

import httpx
import numpy as np
import uvicorn

from labelforge import LabelApp, LabelMask, Volume, dice, nifti_read, nifti_write
from labelforge.server import create_server


def make_case(seed, n=16, r=4):
    rng = np.random.default_rng(seed)
    c = n // 2
    x, y, z = np.ogrid[:n, :n, :n]
    gt = (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= r * r
    data = rng.normal(0.0, 3.0, (n, n, n)) + 100.0 * gt
    return Volume(data.astype(np.float32)), gt


def split_multipart(resp):
    boundary = resp.headers["content-type"].split("boundary=")[1]
    parts = {}
    for seg in resp.content.split(b"--" + boundary.encode())[1:-1]:
        head, _, rest = seg[2:].partition(b"\r\n\r\n")
        name = re.search(rb'name="([^"]+)"', head).group(1).decode()
        parts[name] = rest[:-2]
    return parts


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--port", type=int, default=8123)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    root = tempfile.mkdtemp(prefix="labelforge_rest_")
    engine = LabelApp(root)
    server = uvicorn.Server(
        uvicorn.Config(create_server(engine), host="127.0.0.1", port=args.port,
                       log_level="warning")
    )
    threading.Thread(target=server.run, daemon=True).start()
    base = f"http://127.0.0.1:{args.port}"
    with httpx.Client(base_url=base, timeout=60.0) as client:
        for _ in range(200):  # wait for the socket
            try:
                client.get("/info")
                break
            except httpx.TransportError:
                time.sleep(0.05)

        info = client.get("/info").json()
        print(f"server up: {info['name']} v{info['version']}, models {sorted(info['models'])}")

        cases = [make_case(args.seed + i) for i in range(3)]
        for i, (v, gt) in enumerate(cases):
            client.post("/datastore", files={"image": (f"ct_{i}.nii.gz", nifti_write(v, gz=True))})
            if i < 2:
                client.put("/datastore/label", params={"image": f"ct_{i}"},
                           content=nifti_write(Volume(gt.astype(np.float32)), gz=True))

        client.post("/train/deepedit", json={"epochs": 5})
        while client.get("/train").json()["state"] in ("pending", "running"):
            time.sleep(0.1)
        status = client.get("/train").json()
        print(f"training {status['state']} after {status['epochs_done']} epochs")

        pick = client.post("/activelearning/first").json()["image_id"]
        v, gt = cases[2]
        c = v.dims[0] // 2
        params = {"clicks": {"foreground": [[c, c, c]], "background": []}}
        resp = client.post("/infer/deepedit", params={"image": pick},
                           data={"params": json.dumps(params)})
        parts = split_multipart(resp)
        meta = json.loads(parts["params"])
        label = nifti_read(parts["label"])
        d = dice(LabelMask((label.data > 0.5).astype(np.uint8)),
                 LabelMask(gt.astype(np.uint8)))
        print(f"inference on {pick}: {meta['label_voxel_count']} voxels in "
              f"{meta['latency_ms']:.1f} ms, Dice vs truth {d:.3f}")

        client.put("/datastore/label", params={"image": pick}, content=parts["label"])
        listing = client.get("/datastore").json()
        print(f"datastore now {len(listing['labeled'])} labeled / {len(listing['unlabeled'])} unlabeled")

    server.should_exit = True
    return 0


if __name__ == "__main__":
    sys.exit(main())
