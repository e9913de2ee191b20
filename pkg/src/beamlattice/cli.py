"""Command-line entry point: gen, decode, segment, oracle, bench, eval."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import checks, io
from .batched import Batch, batched_beam_search, make_batches
from .core import EOS_MODES, DecoderConfig, validate_grid
from .metrics import evaluate
from .oracle import MAX_ALIGNMENTS, MAX_FRAMES
from .scorers import ScorerError, TableScorer, parse_scorer
from .search import beam_search
from .segment import (HARD_DEFAULT_S, VAD_DEFAULT_S, NodeMap, VadConfig, hard_segments,
                      seconds_to_frames, segment_stats, segment_vad_outputs)
from .synth import STYLES, make_grid, vad_outputs

log = logging.getLogger("beamlattice")


class CliError(Exception):
    """Command-level failure reported as one line on stderr with a nonzero exit."""


@dataclass
class BenchReport:
    wall_seconds: float
    audio_seconds: float
    xrt: float
    steps: int
    scorer_queries: int
    ctc_frames_evaluated: int
    utterances: int

    @classmethod
    def from_results(cls, results, utts, wall: float) -> "BenchReport":
        audio = sum(u.true_frames * u.grid.frame_shift_ms / 1000.0 for u in utts)
        return cls(wall_seconds=wall, audio_seconds=audio, xrt=wall / audio if audio else math.nan,
                   steps=sum(r.steps_taken for r in results),
                   scorer_queries=sum(r.stats.get("scorer_queries", 0) for r in results),
                   ctc_frames_evaluated=sum(r.stats.get("ctc_frames_evaluated", 0)
                                            for r in results),
                   utterances=len(results))


# ---------------------------------------------------------------- shared helpers

def _float(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinity") else float(text)


def _add_decoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--ctc-weight", type=float, default=0.3)
    p.add_argument("--eos-m", type=int, default=3)
    p.add_argument("--eos-dend", type=float, default=-10.0)
    p.add_argument("--eos-c", type=int, default=2)
    p.add_argument("--eos-mode", choices=EOS_MODES, default="both")
    p.add_argument("--m1", type=_float, default=5.0)
    p.add_argument("--m2", type=_float, default=math.inf)
    p.add_argument("--max-steps-ratio", type=float, default=1.0)
    p.add_argument("--scorer", default="uniform", help="uniform | table:PATH | loop:TOKEN:P")


def _config(args, **override) -> DecoderConfig:
    kw = dict(beam_width=args.beam, ctc_weight=args.ctc_weight, eos_m=args.eos_m,
              eos_threshold=args.eos_dend, eos_c=args.eos_c, margin_m1=args.m1,
              margin_m2=args.m2, eos_mode=args.eos_mode, max_steps_ratio=args.max_steps_ratio)
    kw.update(override)
    try:
        return DecoderConfig(**kw)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load_utts(manifest) -> list:
    try:
        utts = io.read_manifest(manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"{manifest}: {exc}") from None
    if not utts:
        raise CliError(f"{manifest}: manifest lists no utterances")
    for u in utts:
        problem = validate_grid(u.grid)
        if problem is not None:
            raise CliError(f"{u.id}: invalid grid: {problem}")
    vocabs = {u.grid.vocab for u in utts}
    if len(vocabs) != 1:
        raise CliError(f"{manifest}: grids disagree on vocab size {sorted(vocabs)}")
    return utts


def _scorer(spec: str, n_tokens: int):
    try:
        return parse_scorer(spec, n_tokens)
    except (ScorerError, OSError) as exc:
        raise CliError(str(exc)) from None


def _decode_batch(args: tuple) -> list:
    batch, scorer, cfg = args
    return batched_beam_search(batch, scorer, cfg)


def decode_utterances(utts, scorer, cfg: DecoderConfig, batch_size: int, jobs: int = 1) -> list:
    """Results in input order; batch size 1 decodes each utterance on its own."""
    if batch_size == 1:
        batches = [Batch([u], [i]) for i, u in enumerate(utts)]
    else:
        batches = make_batches(utts, batch_size)
    work = [(b, scorer, cfg) for b in batches]
    if jobs > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_decode_batch, work))
    elif batch_size == 1:
        outs = [[beam_search(b.utterances[0], scorer, cfg)] for b in batches]
    else:
        outs = [_decode_batch(w) for w in work]
    results = [None] * len(utts)
    for batch, out in zip(batches, outs):
        for pos, res in zip(batch.order, out):
            results[pos] = res
    return results


def _open_out(path: Optional[str]):
    return sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    out = Path(args.out)
    try:
        (out / "grids").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from None
    if args.min_frames < 1 or args.max_frames < args.min_frames:
        raise CliError(f"bad frame range [{args.min_frames}, {args.max_frames}]")
    if args.vocab < 1:
        raise CliError(f"vocab must be >= 1, got {args.vocab}")
    silences = [tuple(int(x) for x in s.split(":")) for s in args.silence]
    rng = np.random.default_rng(args.seed)
    rows, refs, vad_rows = [], [], []
    for i in range(args.num_utts):
        uid = f"{args.prefix}{i:04d}"
        t = int(rng.integers(args.min_frames, args.max_frames + 1))
        grid, tokens = make_grid(args.style, rng, t, args.vocab, silences, args.shift, args.peak)
        io.write_grid(out / "grids" / f"{uid}.ctcg", grid)
        rows.append(io.manifest_row(uid, f"grids/{uid}.ctcg", t))
        if tokens is not None:
            refs.append({"id": uid, "tokens": list(tokens)})
        if args.style == "blank_heavy":
            (out / "vad").mkdir(exist_ok=True)
            vout, speech, noise = vad_outputs(rng, t, silences)
            io.write_vad_outputs(out / "vad" / f"{uid}.vadg", vout, args.shift)
            vad_rows.append({"id": uid, "vad": f"vad/{uid}.vadg", "frames": t})
    io.write_jsonl(out / "manifest.jsonl", rows)
    if refs:
        io.write_jsonl(out / "refs.jsonl", refs)
    if vad_rows:
        io.write_jsonl(out / "vad_manifest.jsonl", vad_rows)
        (out / "nodemap.json").write_text(json.dumps(NodeMap(speech, noise).to_json()) + "\n")
    if args.table_order:
        scorer = TableScorer.random(args.vocab, args.table_order, seed=args.seed)
        (out / "scorer.json").write_text(json.dumps(scorer.to_json()) + "\n")
    log.info("wrote %d utterances to %s", len(rows), out)
    return 0


def cmd_decode(args) -> int:
    utts = _load_utts(args.manifest)
    scorer = _scorer(args.scorer, utts[0].grid.vocab - 1)
    cfg = _config(args)
    if args.batch_size < 1:
        raise CliError(f"--batch-size must be >= 1, got {args.batch_size}")
    start = time.perf_counter()
    try:
        results = decode_utterances(utts, scorer, cfg, args.batch_size, args.jobs)
    except (ScorerError, ValueError) as exc:
        raise CliError(str(exc)) from None
    wall = time.perf_counter() - start
    fh = _open_out(args.out)
    try:
        for r in results:
            fh.write(json.dumps(r.to_json()) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    report = BenchReport.from_results(results, utts, wall)
    if args.report:
        Path(args.report).write_text(json.dumps(asdict(report)) + "\n")
    print(f"decoded={report.utterances} wall={report.wall_seconds:.3f}s xrt={report.xrt:.4f} "
          f"ctc_frames={report.ctc_frames_evaluated}", file=sys.stderr)
    return 0


def _segment_inputs(args) -> list:
    """``(id, frames, frame_shift_ms, vad outputs or None)`` per input."""
    items = []
    if args.mode == "hard" and args.frames:
        return [(f"utt{i:04d}", n, args.shift, None) for i, n in enumerate(args.frames)]
    if not args.manifest:
        extra = " or --frames" if args.mode == "hard" else ""
        raise CliError(f"{args.mode} mode needs --manifest{extra}")
    base = Path(args.manifest).parent
    try:
        for row in io.read_jsonl(args.manifest):
            if args.mode == "vad":
                outputs, shift = io.read_vad_outputs(base / row["vad"])
                items.append((row["id"], outputs.shape[0], shift, outputs))
            elif "grid" in row:
                grid = io.read_grid(base / row["grid"])
                items.append((row["id"], grid.num_frames, grid.frame_shift_ms, None))
            else:
                items.append((row["id"], int(row["frames"]), args.shift, None))
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"{args.manifest}: {exc}") from None
    return items


def cmd_segment(args) -> int:
    nodemap = None
    if args.mode == "vad":
        if not args.nodemap:
            raise CliError("vad mode needs --nodemap")
        try:
            nodemap = NodeMap.load(args.nodemap)
        except (OSError, ValueError) as exc:
            raise CliError(f"{args.nodemap}: {exc}") from None
    lo_s, hi_s = VAD_DEFAULT_S if args.mode == "vad" else HARD_DEFAULT_S
    lo_s = args.min if args.min is not None else lo_s
    hi_s = args.max if args.max is not None else hi_s
    segments = []
    inputs = _segment_inputs(args)
    for uid, frames, shift, outputs in inputs:
        lo, hi = seconds_to_frames(lo_s, shift), seconds_to_frames(hi_s, shift)
        try:
            if args.mode == "vad":
                cfg = VadConfig(args.threshold, args.window, lo, hi)
                segments.extend(segment_vad_outputs(outputs, nodemap, cfg, uid))
            else:
                segments.extend(hard_segments(frames, lo, hi, uid))
        except (ValueError, IndexError) as exc:
            raise CliError(f"{uid}: {exc}") from None
    fh = _open_out(args.out)
    try:
        for seg in segments:
            fh.write(json.dumps(seg.to_json(args.mode)) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    stats = segment_stats(segments, inputs[0][2] if inputs else args.shift)
    print(stats, file=sys.stderr if fh is sys.stdout else sys.stdout)
    return 0


def cmd_oracle(args) -> int:
    if args.max_frames > MAX_FRAMES or (args.max_vocab + 1) ** args.max_frames > MAX_ALIGNMENTS:
        raise CliError(f"--max-frames {args.max_frames} with --max-vocab {args.max_vocab} "
                       f"exceeds the enumeration guard")
    if args.max_frames < 1 or args.max_vocab < 1:
        raise CliError("--max-frames and --max-vocab must be >= 1")
    if args.trials == 0:
        print("warning: --trials 0 runs nothing; pass is vacuous", file=sys.stderr)
    report = checks.run_all(args.trials, args.seed, args.max_frames, args.max_vocab, args.mutate)
    failed = False
    for suite, failures in report.items():
        status = "FAIL" if failures else "PASS"
        print(f"{status} {suite} trials={args.trials} failures={len(failures)}")
        for f in failures[:args.show]:
            print(f"  {f}")
        failed |= bool(failures)
    return 1 if failed else 0


def _split(text: str, conv) -> list:
    return [conv(x) for x in text.split(",") if x.strip()]


def cmd_bench(args) -> int:
    utts = _load_utts(args.manifest)
    scorer = _scorer(args.scorer, utts[0].grid.vocab - 1)
    sizes = _split(args.batch_sizes, int)
    m2s = _split(args.m2_values, _float)
    modes = _split(args.eos_modes, str)
    if args.repeat < 1 or not sizes or not m2s or not modes:
        raise CliError("bench needs --repeat >= 1 and non-empty sweep lists")
    for m in modes:
        if m not in EOS_MODES:
            raise CliError(f"unknown eos mode {m!r}")
    cells = []
    for mode in modes:
        for m2 in m2s:
            for size in sizes:
                cfg = _config(args, margin_m2=m2, eos_mode=mode)
                walls = []
                for _ in range(args.repeat):
                    start = time.perf_counter()
                    results = decode_utterances(utts, scorer, cfg, size, args.jobs)
                    walls.append(time.perf_counter() - start)
                report = BenchReport.from_results(results, utts, float(np.mean(walls)))
                cells.append({"batch_size": size, "m2": m2 if math.isfinite(m2) else "inf",
                              "eos_mode": mode, **asdict(report)})
    print(f"{'eos_mode':<9}{'m2':>6}{'batch':>7}{'wall_s':>10}{'xrt':>9}{'steps':>8}"
          f"{'queries':>9}{'ctc_frames':>12}")
    for c in cells:
        print(f"{c['eos_mode']:<9}{str(c['m2']):>6}{c['batch_size']:>7}{c['wall_seconds']:>10.3f}"
              f"{c['xrt']:>9.4f}{c['steps']:>8}{c['scorer_queries']:>9}{c['ctc_frames_evaluated']:>12}")
    _print_ratios(cells)
    if args.out:
        io.write_jsonl(args.out, cells)
    return 0


def _print_ratios(cells) -> None:
    for c in cells:
        if c["batch_size"] == 1:
            continue
        ref = [d for d in cells if d["batch_size"] == 1 and d["m2"] == c["m2"]
               and d["eos_mode"] == c["eos_mode"]]
        if ref:
            print(f"speedup batch {c['batch_size']} vs 1 (m2={c['m2']}, {c['eos_mode']}): "
                  f"{ref[0]['wall_seconds'] / c['wall_seconds']:.2f}x")
    for c in cells:
        if c["m2"] == "inf":
            continue
        ref = [d for d in cells if d["m2"] == "inf" and d["batch_size"] == c["batch_size"]
               and d["eos_mode"] == c["eos_mode"]]
        if ref and ref[0]["ctc_frames_evaluated"]:
            ratio = c["ctc_frames_evaluated"] / ref[0]["ctc_frames_evaluated"]
            print(f"ctc_frames m2={c['m2']} / m2=inf (batch {c['batch_size']}, {c['eos_mode']}): "
                  f"{ratio:.3f}")


def cmd_eval(args) -> int:
    try:
        refs = {row["id"]: row["tokens"] for row in io.read_jsonl(args.refs)}
        hyps = {row["id"]: row["tokens"] for row in io.read_jsonl(args.hyps)}
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(str(exc)) from None
    try:
        report = evaluate(refs, hyps)
        print(json.dumps(report.to_json()))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if args.verbose:
        for uid in refs:
            print(f"{uid} distance={report.distances[uid]} ref_len={report.ref_lengths[uid]}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamlattice",
                                     description="Joint CTC/attention decoding of posterior grids")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic grids and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-utts", type=int, default=4)
    p.add_argument("--min-frames", type=int, default=50)
    p.add_argument("--max-frames", type=int, default=100)
    p.add_argument("--vocab", type=int, default=5)
    p.add_argument("--style", choices=STYLES, default="planted")
    p.add_argument("--shift", type=int, default=40, help="frame shift in ms")
    p.add_argument("--peak", type=float, default=None, help="label logit boost")
    p.add_argument("--silence", action="append", default=[], metavar="START:END",
                   help="blank-certain frame range (blank_heavy style), repeatable")
    p.add_argument("--table-order", type=int, default=0,
                   help="also write a random n-gram scorer of this order to scorer.json")
    p.add_argument("--prefix", default="utt")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("decode", help="decode every utterance of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="results JSON lines (default stdout)")
    p.add_argument("--report", default=None, help="write the timing report as JSON")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--jobs", type=int, default=1)
    _add_decoder_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("segment", help="split long inputs by VAD or uniformly")
    p.add_argument("--mode", choices=("vad", "hard"), required=True)
    p.add_argument("--manifest", help="grid manifest (hard) or VAD manifest (vad)")
    p.add_argument("--frames", type=int, nargs="*", help="frame counts (hard mode)")
    p.add_argument("--nodemap")
    p.add_argument("--min", type=float, default=None, help="minimum segment length, seconds")
    p.add_argument("--max", type=float, default=None, help="maximum segment length, seconds")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--window", type=int, default=5, help="LLR smoothing window, frames")
    p.add_argument("--shift", type=int, default=10, help="frame shift in ms for --frames")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("oracle", help="check the recursions and search against brute force")
    p.add_argument("--max-frames", type=int, default=6)
    p.add_argument("--max-vocab", type=int, default=3)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutate", choices=checks.MUTATIONS, default="none",
                   help="inject a known fault to confirm the suites catch it")
    p.add_argument("--show", type=int, default=3, help="counterexamples printed per suite")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="time decoding over a sweep of settings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--batch-sizes", default="1,16")
    p.add_argument("--m2-values", default="inf,20")
    p.add_argument("--eos-modes", default="both")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="write one JSON line per cell")
    _add_decoder_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="token error rate of decoded results")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("BEAMLATTICE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
