"""Command line front end: train / compress / eval / sweep / beta.

Every run folder gets the metric files as comma-separated text with a
`# run_digest=` comment line plus a JSON sidecar capturing the full
configuration, so identical config + seed reruns are byte-identical.

Exit codes: 0 success, 2 bad configuration or usage, 3 data/ingestion
problem, 4 numerical divergence, 5 too many failed sweep cells.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .archive import ArchiveError, config_digest, load_model, save_model
from .compression import CompressionPlan, compress_model, compression_report
from .experiments import (
    TrainingDiverged,
    accuracy_evaluator,
    eval_accuracy,
    eval_memorization_rms,
    eval_perplexity,
    memorization_task,
    perplexity_evaluator,
    train_language_model,
    train_memorization,
    train_scanline_classifier,
)
from .perturbation import beta as beta_curve
from .perturbation import linearity_fit
from .sweep import (
    IsolineSpec,
    extract_isoline,
    geometric_ranks,
    grid_to_db,
    read_grid_csv,
    temporal_sweep,
    rank_sweep,
    write_grid_csv,
)
from .tasks import IngestionError, build_vocab, load_mnist, synthetic_corpus, tokenize
from .training import TrainingConfig

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CELLS = 5


def _out_root(args) -> Path:
    root = args.out or os.environ.get("RNNSVD_OUT", "runs")
    p = Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_sidecar(outdir: Path, name: str, config: dict) -> str:
    digest = config_digest(config)
    sidecar = dict(config=config, digest=digest)
    (outdir / f"{name}.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n",
                                         encoding="utf-8")
    return digest


def _write_log_csv(path: Path, rows: list[dict], digest: str) -> None:
    if not rows:
        path.write_text(f"# run_digest={digest}\n", encoding="utf-8")
        return
    cols = list(rows[0].keys())
    lines = [f"# run_digest={digest}", ",".join(cols)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _training_config(args) -> TrainingConfig:
    return TrainingConfig(
        learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2, epsilon=args.epsilon,
        keep_prob=args.keep_prob, batch_size=args.batch_size, epochs=args.epochs,
        window=args.window, clip_norm=None if args.clip_norm == 0 else args.clip_norm,
        seed=args.seed)


def _load_corpus_ids(args):
    if args.corpus:
        try:
            text = Path(args.corpus).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise IngestionError(f"cannot read corpus: {e}", str(args.corpus)) from e
    else:
        text = synthetic_corpus(args.synthetic_tokens, seed=args.seed)
    tokens = tokenize(text)
    vocab = build_vocab(tokens, max_size=args.vocab_cap)
    ids = vocab.encode(tokens)
    split = max(int(ids.size * 0.9), 1)
    return ids[:split], ids[split:], vocab


def cmd_train(args) -> int:
    outdir = _out_root(args)
    cfg = _training_config(args)
    config = dict(command="train", experiment=args.experiment, cell=args.cell,
                  hidden=args.hidden, training=cfg.to_dict(),
                  n_bits=args.n_bits, t_max=args.t_max, embed_dim=args.embed_dim,
                  vocab_cap=args.vocab_cap, corpus=args.corpus,
                  synthetic_tokens=args.synthetic_tokens, mnist_dir=args.mnist_dir,
                  rms_threshold=args.rms_threshold)
    digest = _write_sidecar(outdir, "train_run", config)
    archive_path = outdir / "model.rsva"
    best_path = outdir / "model_best.rsva"
    best_metric = [None]

    def better(row: dict) -> float | None:
        for key, sign in (("rms", -1.0), ("eval_perplexity", -1.0), ("accuracy", 1.0),
                          ("train_perplexity", -1.0), ("train_loss", -1.0)):
            if key in row:
                return sign * row[key]
        return None

    vocab_tokens = [None]

    def on_epoch(model, row):
        meta = dict(config=config, digest=digest, last_epoch=row)
        save_model(archive_path, model, meta=meta, vocab=vocab_tokens[0])
        score = better(row)
        if score is not None and (best_metric[0] is None or score > best_metric[0]):
            best_metric[0] = score
            save_model(best_path, model, meta=meta, vocab=vocab_tokens[0])
        print(",".join(f"{k}={v}" for k, v in row.items()), flush=True)

    if args.experiment == "memorize":
        model, log = train_memorization(
            args.cell, cfg, hidden=args.hidden, n_bits=args.n_bits, t_max=args.t_max,
            rms_threshold=args.rms_threshold, batches_per_epoch=args.batches_per_epoch,
            eval_trials=args.eval_trials, on_epoch=on_epoch)
    elif args.experiment == "lm":
        train_ids, eval_ids, vocab = _load_corpus_ids(args)
        vocab_tokens[0] = vocab.index_to_token
        model, log = train_language_model(
            train_ids, len(vocab), args.cell, args.hidden, args.embed_dim, cfg,
            eval_ids=eval_ids, on_epoch=on_epoch)
    elif args.experiment == "mnist":
        ds = load_mnist(args.mnist_dir)
        model, log = train_scanline_classifier(
            ds.train_images, ds.train_labels, args.cell, cfg, hidden=args.hidden,
            eval_images=ds.test_images, eval_labels=ds.test_labels, on_epoch=on_epoch)
    else:
        raise ValueError(f"unknown experiment {args.experiment!r}")

    _write_log_csv(outdir / "training_log.csv", log, digest)
    print(f"archive: {archive_path}")
    return 0


def _parse_rank(text: str, cap: int) -> int | None:
    if text == "full":
        return None
    r = int(text)
    if not 1 <= r <= cap:
        raise ValueError(f"rank {r} out of range [1, {cap}]")
    return r


def cmd_compress(args) -> int:
    model, meta, vocab = load_model(args.archive)
    from .cells import MgruLayer
    cell = model.cell
    fwd = cell.wf if isinstance(cell, MgruLayer) else cell.w
    cap_f, cap_r = min(fwd.shape), min(cell.wr.shape)
    plan = CompressionPlan(forward_rank=_parse_rank(args.forward_rank, cap_f),
                           recurrent_rank=_parse_rank(args.recurrent_rank, cap_r))
    cm = compress_model(model, plan)
    report = compression_report(model, cm)
    outdir = _out_root(args)
    config = dict(command="compress", archive=str(args.archive),
                  forward_rank=args.forward_rank, recurrent_rank=args.recurrent_rank)
    digest = _write_sidecar(outdir, "compress_run", config)
    out_archive = outdir / "compressed.rsva"
    meta = dict(meta or {})
    meta["compression"] = dict(plan=dict(forward_rank=plan.forward_rank,
                                         recurrent_rank=plan.recurrent_rank),
                               report=report, digest=digest)
    save_model(out_archive, cm.model, meta=meta, vocab=vocab)
    (outdir / "compress_report.json").write_text(
        json.dumps(dict(report=report, digest=digest), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    print(json.dumps(report, sort_keys=True, indent=2))
    print(f"archive: {out_archive}")
    return 0


def _experiment_kind(meta: dict, override: str | None) -> str:
    if override:
        return override
    return (meta or {}).get("config", {}).get("experiment") or ""


def cmd_eval(args) -> int:
    model, meta, vocab = load_model(args.archive)
    kind = _experiment_kind(meta, args.experiment)
    outdir = _out_root(args)
    config = dict(command="eval", archive=str(args.archive), experiment=kind,
                  seed=args.seed, trials=args.eval_trials)
    digest = _write_sidecar(outdir, "eval_run", config)
    if kind == "memorize":
        n_bits = (meta or {}).get("config", {}).get("n_bits", args.n_bits)
        t_max = (meta or {}).get("config", {}).get("t_max", args.t_max)
        pooled, per_t = eval_memorization_rms(model, n_bits, list(range(0, t_max + 1, 5)),
                                              args.eval_trials, args.seed)
        rows = [{"t": t, "rms": v, "n": args.eval_trials} for t, v in sorted(per_t.items())]
        rows.append({"t": "pooled", "rms": pooled, "n": args.eval_trials * len(per_t)})
        _write_log_csv(outdir / "eval.csv", rows, digest)
        print(f"memorization rms (pooled over T): {pooled:.6f}")
    elif kind == "lm":
        if vocab is None:
            raise IngestionError("archive carries no vocabulary; was it trained as lm?")
        if not args.corpus:
            raise IngestionError("--corpus required to evaluate a language model")
        from .tasks import Vocab
        v = Vocab(index_to_token=vocab,
                  token_to_index={t: i for i, t in enumerate(vocab)})
        ids = v.encode(tokenize(Path(args.corpus).read_text(encoding="utf-8")))
        ppl, n = eval_perplexity(model, ids, args.batch_size, args.window,
                                 token_budget=args.token_budget)
        _write_log_csv(outdir / "eval.csv", [{"perplexity": ppl, "tokens": n}], digest)
        print(f"perplexity: {ppl:.4f} over {n} tokens")
    elif kind == "mnist":
        ds = load_mnist(args.mnist_dir)
        acc, n = eval_accuracy(model, ds.test_images, ds.test_labels)
        _write_log_csv(outdir / "eval.csv", [{"accuracy": acc, "n": n}], digest)
        print(f"test accuracy: {acc:.4f} over {n} images")
    else:
        raise ValueError("cannot determine experiment kind; pass --experiment")
    return 0


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def cmd_sweep(args) -> int:
    model, meta, vocab = load_model(args.archive)
    kind = _experiment_kind(meta, args.experiment)
    outdir = _out_root(args)
    config = dict(command="sweep", archive=str(args.archive), experiment=kind,
                  temporal=args.temporal, ranks=args.ranks, t_values=args.t_values,
                  forward_ranks=args.forward_ranks, recurrent_ranks=args.recurrent_ranks,
                  trials=args.trials, seed=args.seed, isolines=args.isoline,
                  token_budget=args.token_budget)
    digest = _write_sidecar(outdir, "sweep_run", config)

    from .cells import MgruLayer
    cell = model.cell
    fwd = cell.wf if isinstance(cell, MgruLayer) else cell.w
    cap_f, cap_r = min(fwd.shape), min(cell.wr.shape)

    if args.temporal:
        if kind and kind != "memorize":
            raise ValueError(f"temporal sweep expects a memorize archive, got {kind!r}")
        n_bits = (meta or {}).get("config", {}).get("n_bits", args.n_bits)
        ranks = _parse_int_list(args.ranks) if args.ranks else geometric_ranks(cap_r)
        ts = _parse_int_list(args.t_values) if args.t_values else list(range(0, 31))
        grid = temporal_sweep(model, memorization_task(n_bits), ranks, ts,
                              trials=args.trials, seed=args.seed)
    else:
        f_ranks = (_parse_int_list(args.forward_ranks) if args.forward_ranks
                   else geometric_ranks(cap_f))
        r_ranks = (_parse_int_list(args.recurrent_ranks) if args.recurrent_ranks
                   else geometric_ranks(cap_r))
        if kind == "lm":
            if not args.corpus:
                raise IngestionError("--corpus required for a language-model sweep")
            from .tasks import Vocab
            v = Vocab(index_to_token=vocab,
                      token_to_index={t: i for i, t in enumerate(vocab)})
            ids = v.encode(tokenize(Path(args.corpus).read_text(encoding="utf-8")))
            evaluator = perplexity_evaluator(ids, args.batch_size, args.window,
                                             token_budget=args.token_budget)
            grid = rank_sweep(model, f_ranks, r_ranks, evaluator, metric="perplexity")
        elif kind == "mnist":
            ds = load_mnist(args.mnist_dir)
            evaluator = accuracy_evaluator(ds.test_images, ds.test_labels)
            grid = rank_sweep(model, f_ranks, r_ranks, evaluator, metric="accuracy")
        else:
            raise ValueError("rank sweeps need an lm or mnist archive")

    write_grid_csv(outdir / "grid.csv", grid, digest)
    if grid.metric == "perplexity":
        db = grid_to_db(grid)
        write_grid_csv(outdir / "grid_db.csv", db, digest)
    else:
        db = None
    for level in args.isoline or []:
        source = db if db is not None else grid
        pts = extract_isoline(source, IsolineSpec(level=level))
        lines = [f"# run_digest={digest}", f"{source.axis1_name},{source.axis2_name}"]
        lines += [f"{repr(a)},{repr(b)}" for a, b in pts]
        (outdir / f"isoline_{level:g}.csv").write_text("\n".join(lines) + "\n",
                                                       encoding="utf-8")
    if grid.failures:
        print(f"{len(grid.failures)} cells failed", file=sys.stderr)
        for f in grid.failures[:10]:
            print(f"  {f}", file=sys.stderr)
    print(f"grid: {outdir / 'grid.csv'} ({grid.values.size} cells, "
          f"{grid.failed_fraction:.1%} failed)")
    return EXIT_CELLS if grid.failed_fraction > 0.10 else 0


def cmd_beta(args) -> int:
    grid = read_grid_csv(args.grid)
    if not np.all(np.isfinite(grid.delta)):
        raise ValueError("grid has no delta annotations on some cells")
    outdir = _out_root(args)
    config = dict(command="beta", grid=str(args.grid), delta_f=args.delta_f,
                  t_min=args.t_min, t_max=args.t_max)
    digest = _write_sidecar(outdir, "beta_run", config)
    deltas = grid.delta[:, 0]
    order = np.argsort(deltas, kind="stable")
    # collapse duplicate deltas (several ranks can share one delta) keeping
    # the first occurrence
    seen = set()
    keep = []
    for i in order:
        key = round(float(deltas[i]), 15)
        if key not in seen:
            seen.add(key)
            keep.append(i)
    keep = np.array(keep)
    delta_grid = deltas[keep]
    if delta_grid[0] != 0.0:
        raise ValueError("grid must include a full-rank (delta = 0) row")
    if args.delta_f > float(delta_grid.max()):
        raise ValueError(f"delta_f={args.delta_f} exceeds every annotated delta "
                         f"(max {float(delta_grid.max()):.6g})")
    curve = beta_curve(delta_grid, grid.axis2.astype(int), grid.values[keep, :],
                       args.delta_f)
    rows = [{"t": int(t), "beta": float(b)} for t, b in zip(curve.t_values, curve.beta)]
    _write_log_csv(outdir / "beta.csv", rows, digest)
    window = [(t, b) for t, b in zip(curve.t_values, curve.beta)
              if args.t_min <= t <= args.t_max]
    slope, intercept, r2 = linearity_fit(window)
    fit = dict(slope=slope, intercept=intercept, r_squared=r2,
               t_min=args.t_min, t_max=args.t_max, delta_f=args.delta_f,
               n_delta=int(curve.delta_grid.size), digest=digest)
    (outdir / "beta_fit.json").write_text(json.dumps(fit, sort_keys=True, indent=2) + "\n",
                                          encoding="utf-8")
    print(json.dumps(fit, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rnnsvd",
                                 description="train, compress and analyze small recurrent networks")
    sub = ap.add_subparsers(dest="command", required=True)

    def common_out(p):
        p.add_argument("--out", default=None,
                       help="output directory (default $RNNSVD_OUT or ./runs)")
        p.add_argument("--config", default=None,
                       help="JSON file of defaults; explicit flags win")

    tr = sub.add_parser("train", help="train a model and write an archive")
    tr.add_argument("--experiment", choices=["lm", "mnist", "memorize"], required=True)
    tr.add_argument("--cell", choices=["rnn", "mgru"], default="rnn")
    tr.add_argument("--hidden", type=int, default=100)
    tr.add_argument("--embed-dim", type=int, default=128)
    tr.add_argument("--epochs", type=int, default=3)
    tr.add_argument("--batch-size", type=int, default=20)
    tr.add_argument("--window", type=int, default=32)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--beta1", type=float, default=0.9)
    tr.add_argument("--beta2", type=float, default=0.999)
    tr.add_argument("--epsilon", type=float, default=1e-8)
    tr.add_argument("--keep-prob", type=float, default=1.0,
                    help="dropout keep probability on hidden outputs (lm default 0.5)")
    tr.add_argument("--clip-norm", type=float, default=5.0, help="0 disables clipping")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--corpus", default=None, help="plain-text corpus path (lm)")
    tr.add_argument("--synthetic-tokens", type=int, default=300_000,
                    help="fallback synthetic corpus size when no --corpus is given")
    tr.add_argument("--vocab-cap", type=int, default=10_000)
    tr.add_argument("--mnist-dir", default=None, help="directory with the IDX files")
    tr.add_argument("--n-bits", type=int, default=8)
    tr.add_argument("--t-max", type=int, default=30)
    tr.add_argument("--rms-threshold", type=float, default=0.05)
    tr.add_argument("--batches-per-epoch", type=int, default=200)
    tr.add_argument("--eval-trials", type=int, default=200)
    common_out(tr)

    cp = sub.add_parser("compress", help="rank-reduce an archive")
    cp.add_argument("archive")
    cp.add_argument("--forward-rank", default="full")
    cp.add_argument("--recurrent-rank", default="full")
    common_out(cp)

    ev = sub.add_parser("eval", help="evaluate an archive")
    ev.add_argument("archive")
    ev.add_argument("--experiment", choices=["lm", "mnist", "memorize"], default=None)
    ev.add_argument("--corpus", default=None)
    ev.add_argument("--mnist-dir", default=None)
    ev.add_argument("--batch-size", type=int, default=20)
    ev.add_argument("--window", type=int, default=32)
    ev.add_argument("--token-budget", type=int, default=None)
    ev.add_argument("--eval-trials", type=int, default=200)
    ev.add_argument("--n-bits", type=int, default=8)
    ev.add_argument("--t-max", type=int, default=30)
    ev.add_argument("--seed", type=int, default=0)
    common_out(ev)

    sw = sub.add_parser("sweep", help="rank or rank x delay sweep")
    sw.add_argument("archive")
    sw.add_argument("--experiment", choices=["lm", "mnist", "memorize"], default=None)
    sw.add_argument("--temporal", action="store_true",
                    help="sweep (recurrent rank x delay) on a memorize archive")
    sw.add_argument("--ranks", default=None, help="comma list, temporal sweep")
    sw.add_argument("--t-values", default=None, help="comma list, temporal sweep")
    sw.add_argument("--forward-ranks", default=None, help="comma list")
    sw.add_argument("--recurrent-ranks", default=None, help="comma list")
    sw.add_argument("--trials", type=int, default=1000)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--corpus", default=None)
    sw.add_argument("--mnist-dir", default=None)
    sw.add_argument("--batch-size", type=int, default=20)
    sw.add_argument("--window", type=int, default=32)
    sw.add_argument("--token-budget", type=int, default=None)
    sw.add_argument("--n-bits", type=int, default=8)
    sw.add_argument("--isoline", type=float, action="append",
                    help="metric level to extract (dB for lm grids); repeatable")
    common_out(sw)

    bt = sub.add_parser("beta", help="collapse a temporal grid into beta(T)")
    bt.add_argument("grid", help="grid.csv from a temporal sweep")
    bt.add_argument("--delta-f", type=float, default=0.03)
    bt.add_argument("--t-min", type=int, default=5)
    bt.add_argument("--t-max", type=int, default=30)
    common_out(bt)
    return ap


def _apply_config_file(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    # first parse to find --config, then re-parse with file values as
    # defaults so explicit flags keep the last word
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            ap.error(f"bad --config file: {e}")
        sub = ap._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
        unknown = [k for k in overrides if not any(
            a.dest == k for a in sub._actions)]
        if unknown:
            ap.error(f"unknown keys in --config: {unknown}")
        sub.set_defaults(**overrides)
        args = ap.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = _apply_config_file(ap, sys.argv[1:] if argv is None else list(argv))
    handlers = {"train": cmd_train, "compress": cmd_compress, "eval": cmd_eval,
                "sweep": cmd_sweep, "beta": cmd_beta}
    try:
        return handlers[args.command](args)
    except (IngestionError, ArchiveError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"diverged: {e} (last epoch checkpoint retained)", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
