"""Command-line interface: `matbridge convert` and `matbridge inspect`."""

import argparse
import sys

from .core import BridgeError, convert, inspect_pair, load_pair, parse_band_list, read_remap


def _add_pair_args(p):
    p.add_argument("cube", help="path to the .mat file holding the H x W x B cube")
    p.add_argument("gt", help="path to the .mat file holding the H x W ground truth")
    p.add_argument("--cube-var", default=None, help="variable name inside the cube .mat")
    p.add_argument("--gt-var", default=None, help="variable name inside the gt .mat")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="matbridge",
        description="Convert MATLAB hyperspectral cube/ground-truth pairs to .hsc/.hsl.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_conv = sub.add_parser("convert", help="emit <out_prefix>.hsc and <out_prefix>.hsl")
    _add_pair_args(p_conv)
    p_conv.add_argument("out_prefix", help="output path prefix")
    p_conv.add_argument(
        "--class-remap",
        default=None,
        metavar="FILE",
        help="remap file of 'old new' lines; labels not listed become 0",
    )
    p_conv.add_argument(
        "--drop-bands",
        default=None,
        metavar="LIST",
        help="band indices to remove, e.g. '103-108,149-163,219'",
    )

    p_insp = sub.add_parser("inspect", help="print dims and per-class labeled counts")
    _add_pair_args(p_insp)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        pair = load_pair(args.cube, args.gt, args.cube_var, args.gt_var)
        if args.command == "inspect":
            print(inspect_pair(pair))
        else:
            remap = read_remap(args.class_remap) if args.class_remap else None
            drop = parse_band_list(args.drop_bands) if args.drop_bands else None
            hsc_path, hsl_path = convert(pair, args.out_prefix, remap, drop)
            print(f"wrote {hsc_path}")
            print(f"wrote {hsl_path}")
    except (BridgeError, OSError) as exc:
        print(f"matbridge: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
