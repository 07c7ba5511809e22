"""Command-line entry: render success plots from report files.

Reports come either from repeated ``--report PATH[=LABEL]`` flags or from
an INI spec file (``--spec``) with a ``[plots]`` section (out, format,
subsets) and a ``[reports]`` section mapping labels to report paths.

Exit codes: 0 on success, 2 on any input error (unreadable reports,
mismatched suite hashes, bad flags).
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .render import DEFAULT_SUBSETS, PlotSpec, ReportError, ReportRef, render


def _report_ref(arg: str) -> ReportRef:
    path, sep, label = arg.partition("=")
    ref_path = Path(path)
    return ReportRef(ref_path, label if sep else ref_path.parent.name or path)


def _spec_from_file(path: Path) -> PlotSpec:
    if not path.is_file():
        raise ReportError(f"spec file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ReportError(f"malformed spec {path}: {exc}") from exc
    if "reports" not in parser or not parser["reports"]:
        raise ReportError(f"spec {path} needs a [reports] section with at "
                          "least one label = path entry")
    plots = parser["plots"] if "plots" in parser else {}
    subsets = tuple(
        s.strip() for s in plots.get("subsets", "").split(",") if s.strip()
    ) or DEFAULT_SUBSETS
    reports = [ReportRef(Path(p), label) for label, p in parser["reports"].items()]
    return PlotSpec(reports=reports, subsets=subsets,
                    fmt=plots.get("format", "svg").strip().lower(),
                    out_dir=Path(plots.get("out", "plots-out").strip()))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rtplots",
        description="Render per-subset success plots from evaluation reports.")
    parser.add_argument("--spec", type=Path,
                        help="INI spec file ([plots] + [reports] sections)")
    parser.add_argument("--report", action="append", default=[],
                        metavar="PATH[=LABEL]",
                        help="report.json to draw; repeat for several trackers")
    parser.add_argument("--out", type=Path, default=Path("plots-out"),
                        help="output directory (default plots-out)")
    parser.add_argument("--subsets", default=",".join(DEFAULT_SUBSETS),
                        help="comma-separated subset panels "
                             f"(default {','.join(DEFAULT_SUBSETS)})")
    parser.add_argument("--format", default="svg", choices=("svg", "png"),
                        help="image format (default svg)")
    args = parser.parse_args(argv)

    try:
        if args.spec is not None:
            if args.report:
                raise ReportError("--spec and --report are mutually exclusive")
            spec = _spec_from_file(args.spec)
        else:
            if not args.report:
                parser.print_usage(sys.stderr)
                print("rtplots: need --spec or at least one --report",
                      file=sys.stderr)
                return 2
            subsets = tuple(s.strip() for s in args.subsets.split(",")
                            if s.strip())
            spec = PlotSpec(reports=[_report_ref(r) for r in args.report],
                            subsets=subsets, fmt=args.format,
                            out_dir=args.out)
        written = render(spec)
    except ReportError as exc:
        print(f"rtplots: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
