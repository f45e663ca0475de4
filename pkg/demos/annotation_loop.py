"""Simulated annotation campaign: rank, click, refine, submit, retrain.

This walks the whole loop the server exposes, but in-process so the
mechanics are easy to read:

  1. seed a datastore with synthetic organs and hand-label a few of them
  2. train the click-conditioned model on the seed labels
  3. repeatedly pull the most informative unlabeled image, predict, drop
     corrective clicks where the prediction disagrees with ground truth,
     submit the refined mask, and retrain every few submissions

The printout tracks Dice as labels accumulate and how many clicks each
image needed. Ground truth is known here (the images are synthetic), so
"the annotator" is a simulator; on real data the clicks come from a human.
"""

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from labelforge import (
    LabelApp,
    LabelMask,
    Volume,
    dataset_stats,
    dice,
    nifti_write,
    plan,
    simulate_clicks,
)


def synth_case(rng, n=16):
    """A blurred ellipsoid with intensity offset, different every call."""
    c = rng.integers(n // 3, 2 * n // 3, 3)
    r = rng.integers(3, n // 3, 3)
    x, y, z = np.ogrid[:n, :n, :n]
    gt = (
        ((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2
        <= 1.0
    )
    data = rng.normal(0.0, 4.0, (n, n, n)) + 90.0 * gt
    return Volume(data.astype(np.float32)), LabelMask(gt.astype(np.uint8))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", type=int, default=10)
    ap.add_argument("--seed-labels", type=int, default=3)
    ap.add_argument("--clicks", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--strategy", default="epistemic",
                    choices=["first", "random", "epistemic", "tta"])
    ap.add_argument("--retrain-every", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--root", type=Path, default=None,
                    help="datastore directory (default: a fresh temp dir)")
    args = ap.parse_args(argv)

    root = args.root or Path(tempfile.mkdtemp(prefix="labelforge_demo_"))
    rng = np.random.default_rng(args.seed)

    # one process owns one datastore handle; everything below goes through
    # the engine's, since a second handle would not see its writes
    app = LabelApp(root)
    store = app.datastore
    truth = {}
    for i in range(args.cases):
        v, gt = synth_case(rng)
        image_id = store.add_image(f"organ_{i:02d}", nifti_write(v, gz=True))
        truth[image_id] = gt
        if i < args.seed_labels:
            store.save_label(image_id, "final", nifti_write(Volume(gt.data.astype(np.float32)), gz=True))
    print(f"datastore {root}: {args.cases} images, {args.seed_labels} seed labels")

    stats = dataset_stats(store)
    p = plan(stats, 256 * 1024 * 1024)
    print(f"plan: roi {p.roi_size}, batch {p.batch_size}, clip {tuple(round(c, 1) for c in p.clip_range)}")

    def retrain():
        app.start_training("deepedit", {"epochs": args.epochs, "click_budget": args.clicks})
        app.wait_for_training(300)
        job = app.train_status()
        d = f"{job.val_dice:.3f}" if job.val_dice is not None else "n/a"
        print(f"  trained {job.epochs_done} epochs, loss {job.train_loss:.4f}, val Dice {d}")

    retrain()

    submitted = 0
    while True:
        labeled, unlabeled = store.partition()
        if not unlabeled:
            break
        pick = app.next_sample(args.strategy, seed=args.seed).image_id
        v = store.load_image(pick)
        gt = truth[pick]

        mask, _ = app.infer("deepedit", v, None, None, {})
        d0 = dice(mask, gt)
        clicks = simulate_clicks(mask, gt, args.clicks, rng_seed=args.seed)
        if not clicks.is_empty():
            mask, _ = app.infer("deepedit", v, clicks, None, {})
        d1 = dice(mask, gt)
        n_clicks = len(clicks.positive) + len(clicks.negative)
        print(f"{pick}: Dice {d0:.3f} -> {d1:.3f} with {n_clicks} clicks "
              f"({len(labeled)} labels so far)")

        # the simulator submits the corrected ground truth, as a careful
        # annotator would after fixing the remaining voxels by hand
        store.save_label(pick, "final", nifti_write(Volume(gt.data.astype(np.float32)), gz=True))
        submitted += 1
        if submitted % args.retrain_every == 0:
            retrain()

    retrain()
    print(f"done: {submitted} images annotated interactively")
    return 0


if __name__ == "__main__":
    sys.exit(main())
