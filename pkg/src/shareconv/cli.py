"""``shareconv`` command line: count, train, eval, gradcheck, equiv."""

import argparse
import logging
import sys

from .catalog import (
    CATALOG, PUBLISHED_COUNTS, build, count_distinct_convs, count_parameters, total_savings,
)
from .data import AugmentConfig
from .optim import OptimizerConfig


def _lr_drop(text):
    try:
        epoch, factor = text.split(":")
        return int(epoch), float(factor)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected EPOCH:FACTOR, got {text!r}")


def count_row(arch, shared):
    """One printable row of parameter and convolution counts for ``arch``."""
    net = build(arch, shared=shared)
    params = count_parameters(net)
    unshared = params if not shared else count_parameters(build(arch))
    convs = count_distinct_convs(net)
    saving = 100.0 * (unshared - params) / unshared
    row = (f"{arch:<10} shared={'yes' if shared else 'no ':<3} params={params:>11,d}"
           f" ({params / 1e6:.2f} M)  reduction={saving:5.1f}%"
           f"  convs distinct={convs.distinct} idealized={convs.idealized}")
    ref = PUBLISHED_COUNTS.get(arch)
    if ref:
        want = ref[1] if shared else ref[0]
        ok = abs(params / 1e6 - want) <= 0.01 * want
        row += f"  | published: {want:.2f} M [{'match' if ok else 'MISMATCH'}]"
        if shared:
            ok_pct = abs(saving - ref[2]) <= 1.0
            row += f" {ref[2]}% [{'match' if ok_pct else 'MISMATCH'}]"
            row += f" convs {ref[4]}"
        else:
            row += f" convs {ref[3]}"
    return row


def cmd_count(args):
    names = [args.arch] if args.arch else list(PUBLISHED_COUNTS)
    for name in names:
        print(count_row(name, args.shared))
        if args.shared:
            spec = build(name, shared=True).spec
            print(f"{'':<10} savings identity: {total_savings(spec):,d} parameters")
    return 0


def cmd_train(args):
    from .train import TrainConfig, train

    opt = OptimizerConfig(args.lr, args.momentum, args.weight_decay,
                          tuple(args.lr_drop or ()))
    config = TrainConfig(
        arch=args.arch, shared=args.shared, dataset=args.dataset,
        data_dir=args.data_dir, epochs=args.epochs, batch_size=args.batch,
        optimizer=opt, seed=args.seed, out_dir=args.out,
        augment=AugmentConfig(horizontal_flip=True) if args.flip else None,
        train_subset=args.train_subset,
    )
    result = train(config)
    rec = result.final
    print(f"epoch {rec.epoch}: loss {rec.train_loss:.4f} top1 {rec.top1_error:.2f}% "
          f"top5 {rec.top5_error:.2f}%")
    return 0


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .train import TrainConfig, evaluate, load_datasets

    net, _ = load_checkpoint(args.checkpoint)
    config = TrainConfig(arch=net.spec.name, dataset=args.dataset,
                         data_dir=args.data_dir, seed=args.seed)
    _, test_set = load_datasets(config, net.spec.class_count)
    top1, top5 = evaluate(net, test_set)
    print(f"top1 error {top1:.2f}%  top5 error {top5:.2f}%")
    return 0


def cmd_gradcheck(args):
    from .verify import gradcheck

    ok = True
    for shared in (True, False) if args.both else (not args.unshared,):
        report = gradcheck(args.arch, seed=args.seed, shared=shared)
        print(report)
        ok &= report.passed
    return 0 if ok else 1


def cmd_equiv(args):
    from .verify import equiv

    report = equiv(args.arch, seed=args.seed)
    print(report)
    return 0 if report.passed else 1


def make_parser():
    p = argparse.ArgumentParser(
        prog="shareconv",
        description="Weight-shared residual networks: counting, training, checks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    arch_help = f"architecture ({', '.join(CATALOG)}, or ARCH/wDIVbBLOCKS)"

    c = sub.add_parser("count", help="parameter and convolution counts")
    c.add_argument("--arch", help=arch_help + "; default: all reference nets")
    c.add_argument("--shared", action="store_true")
    c.set_defaults(func=cmd_count)

    t = sub.add_parser("train", help="train a network")
    t.add_argument("--arch", required=True, help=arch_help)
    t.add_argument("--shared", action="store_true")
    t.add_argument("--dataset", choices=["cifar10", "cifar100", "synthetic"],
                   default="synthetic")
    t.add_argument("--data-dir")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=5e-4)
    t.add_argument("--lr-drop", type=_lr_drop, nargs="*", metavar="EPOCH:FACTOR")
    t.add_argument("--flip", action="store_true", help="random horizontal flips")
    t.add_argument("--train-subset", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1/top-5 error of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", choices=["cifar10", "cifar100", "synthetic"],
                   required=True)
    e.add_argument("--data-dir")
    e.add_argument("--seed", type=int, default=0,
                   help="seed of the synthetic test split")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--arch", default="resnet164", help=arch_help)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--unshared", action="store_true")
    g.add_argument("--both", action="store_true", help="check shared and unshared")
    g.set_defaults(func=cmd_gradcheck)

    q = sub.add_parser("equiv", help="shared net vs tied unshared clone")
    q.add_argument("--arch", required=True, help=arch_help)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_equiv)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (KeyError, ValueError, OSError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"shareconv: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
