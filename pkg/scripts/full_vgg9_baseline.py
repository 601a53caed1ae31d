"""Full-scale run: split BNN (1/0 activations) VGG-9 on all of CIFAR-10.

    python scripts/full_vgg9_baseline.py --data /path/to/cifar-10-batches-bin --out runs/vgg9

Trains 150 epochs (lr 0.01, decay 0.31 on plateau, batch 128, array size 256)
without variation and reports the test accuracy of the split network.
Expect many hours on a CPU; progress goes to <out>/metrics.csv and the
checkpoint is rewritten after every epoch, so ``--resume`` can continue it.
"""
import argparse
import json
from pathlib import Path

from cimbnn.data_io import load_cifar10
from cimbnn.evaluator import baseline_accuracy
from cimbnn.nn.arch import vgg9
from cimbnn.trainer import TrainConfig, train

TARGET, TOLERANCE = 0.8870, 0.015


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", default="runs/vgg9-full")
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--resume", action="store_true")
    args = ap.parse_args(argv)
    out = Path(args.out)
    train_ds, test_ds = load_cifar10(args.data)
    config = TrainConfig(epochs=args.epochs, seed=args.seed)
    resume = out / "checkpoint" if args.resume and (out / "checkpoint").exists() else None
    result = train(config, vgg9(), train_ds, out_dir=out, resume=resume, log=print)
    acc = baseline_accuracy(result.model, test_ds)
    ok = abs(acc - TARGET) <= TOLERANCE
    summary = {"test_accuracy": acc, "target": TARGET, "tolerance": TOLERANCE, "pass": ok}
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"test accuracy {acc:.4f} (target {TARGET} +/- {TOLERANCE}): {'PASS' if ok else 'FAIL'}")
    return acc


if __name__ == "__main__":
    main()
