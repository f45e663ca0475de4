"""Operator command line: one subcommand per workflow step.

JSON results go to standard output, diagnostics to standard error. Exit
codes: 0 success, 2 usage errors (including missing interaction inputs a
model requires), 1 runtime failures. Stochastic commands take --seed and
default to 0 so runs are reproducible; the infer path reuses the same
engine the server calls, which keeps CLI and server labels byte-identical
for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .app import DEFAULT_BUDGET_BYTES, LabelApp, default_manifest, load_manifest
from .datastore import Datastore
from .errors import LabelForgeError, MissingClicks, MissingScribbles
from .nifti import nifti_read, nifti_write
from .planner import dataset_stats, plan as make_plan
from .server import DEFAULT_PORT
from .volume import ClickSet, LabelMask, Volume, dice
from .guidance import simulate_clicks


def _load_mask(path) -> LabelMask:
    v = nifti_read(Path(path).read_bytes())
    return LabelMask((v.data > 0.5).astype(np.uint8))


def _engine(args) -> LabelApp:
    manifest = load_manifest(args.manifest) if getattr(args, "manifest", None) else None
    return LabelApp(args.root, manifest)


def cmd_serve(args) -> int:
    from .server import serve

    serve(
        root=args.root,
        port=args.port,
        manifest_path=args.manifest,
        budget_bytes=args.budget_bytes,
        host=args.host,
    )
    return 0


def cmd_plan(args) -> int:
    ds = Datastore.open_or_init(args.root)
    p = make_plan(dataset_stats(ds), args.budget_bytes)
    print(json.dumps(p.to_json_dict(), indent=2))
    return 0


def cmd_infer(args) -> int:
    engine = _engine(args)
    src = Path(args.image)
    if src.exists():
        v = nifti_read(src.read_bytes())
    else:
        v = engine.datastore.load_image(args.image)
    params = json.loads(args.params) if args.params else {}
    clicks = ClickSet.from_json_dict(json.loads(args.clicks)) if args.clicks else None
    scribbles = None
    if args.scribbles:
        from .server import _parse_scribbles

        scribbles = _parse_scribbles(Path(args.scribbles).read_bytes(), v.dims)
    mask, latency_ms = engine.infer(args.model, v, clicks, scribbles, params)
    out = Path(args.out)
    out.write_bytes(
        nifti_write(
            Volume(mask.data.astype(np.float32), v.spacing, v.affine),
            gz=out.name.endswith(".gz"),
        )
    )
    print(
        json.dumps(
            {
                "label": str(out),
                "latency_ms": latency_ms,
                "label_voxel_count": int(mask.data.sum()),
            }
        )
    )
    return 0


def cmd_rank(args) -> int:
    engine = _engine(args)
    scored = engine.rank_pool(args.strategy, seed=args.seed)
    print(json.dumps([s.to_json_dict() for s in scored], indent=2))
    return 0


def cmd_simulate_clicks(args) -> int:
    pred = _load_mask(args.pred)
    gt = _load_mask(args.gt)
    cs = simulate_clicks(pred, gt, args.max_clicks, rng_seed=args.seed)
    print(json.dumps(cs.to_json_dict()))
    return 0


def cmd_datastore_init(args) -> int:
    ds = Datastore.open_or_init(args.root)
    labeled, unlabeled = ds.partition()
    print(json.dumps({"images": len(labeled) + len(unlabeled), "labeled": len(labeled)}))
    return 0


def cmd_eval(args) -> int:
    print(json.dumps(dice(_load_mask(args.pred), _load_mask(args.gt))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="labelforge", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="start the annotation server")
    p.add_argument("--root", default=None, help="datastore root directory")
    p.add_argument("--port", type=int, default=None, help=f"default {DEFAULT_PORT}")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--manifest", default=None, help="app manifest JSON path")
    p.add_argument("--budget-bytes", type=int, default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("plan", help="print the training plan for a datastore")
    p.add_argument("--root", required=True)
    p.add_argument("--budget-bytes", type=int, default=DEFAULT_BUDGET_BYTES)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("infer", help="one-shot inference to a label file")
    p.add_argument("--root", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="datastore id or NIfTI path")
    p.add_argument("--clicks", default=None, help='JSON {"foreground":[[x,y,z]...],...}')
    p.add_argument("--scribbles", default=None, help="scribble NIfTI path")
    p.add_argument("--params", default=None, help="extra params JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("rank", help="rank the unlabeled pool")
    p.add_argument("--root", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--strategy", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("simulate-clicks", help="corrective clicks from pred vs gt")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--max-clicks", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_simulate_clicks)

    p = sub.add_parser("datastore-init", help="build or refresh the index")
    p.add_argument("--root", required=True)
    p.set_defaults(fn=cmd_datastore_init)

    p = sub.add_parser("eval", help="Dice between two label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(fn=cmd_eval)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (MissingScribbles, MissingClicks) as e:
        # the flag for a required interaction input was omitted
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except LabelForgeError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
