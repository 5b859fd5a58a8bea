"""Command-line entry point: ``circuit-ens <subcommand> [flags]``.

All artifacts are line-oriented text files named by flags. Every failure
exits nonzero with a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import attribution as A
from . import evaluation as Ev
from . import hpo
from . import model as M
from .circuits import SIZE_GRID, CircuitSpec, circuits_over_grid, greedy_circuit, size_to_count, topk_circuit
from .data import read_batch, write_examples
from .ensemble import EAP_FAMILY, HYBRID_ENS, P_ENS, REDUCTIONS, EnsembleSpec, make_submission, reduce
from .pruning import PruneConfig, train
from .scores import EdgeScoreMap
from .signs import S_ENS, signs_from_eapig, z_score_attribution
from .task import ModelConfig, generate_splits, planted_edge_names
from .warmstart import MaskParams, initialize_mask

SEED_ENV = "CIRCUIT_ENS_SEED"
VARIANTS = (S_ENS, P_ENS, HYBRID_ENS)


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return default_seed() if args.seed is None else args.seed


def _grid(text: str | None) -> tuple[float, ...]:
    if not text:
        return SIZE_GRID
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise CliError(f"bad size grid {text!r}") from None


# Steps shared by the subcommands and the pipeline.

def gen_data(out: Path, cfg: ModelConfig, n_train: int, n_val: int, n_test: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    topo = cfg.topology()
    splits = generate_splits(topo, n_train, n_val, n_test, cfg.seed)
    cfg.save(out / "model.cfg")
    for name, examples in splits.items():
        write_examples(out / f"{name}.txt", examples)
    (out / "planted.txt").write_text("".join(f"{e}\n" for e in planted_edge_names(topo)))


def attribute_step(params, batch, method: str, steps: int, metric: str, ifr: bool) -> EdgeScoreMap:
    scores = A.attribute(params, batch, method, steps, metric)
    return A.ifr_normalize(scores) if ifr else scores


def prune_step(params, batch, config: PruneConfig, init: MaskParams | None):
    return train(params, batch, config, init)


def signs_step(params, batch, mask: MaskParams, eapig: EdgeScoreMap | None, metric: str) -> EdgeScoreMap:
    if eapig is not None:
        return signs_from_eapig(mask, eapig)
    return z_score_attribution(params, mask, batch, metric)


def load_prune_config(path: str | None, seed: int, train_steps: int | None) -> PruneConfig:
    """A config file keeps its own seed; otherwise the defaults get ``seed``."""
    config = PruneConfig.load(path) if path else PruneConfig(seed=seed)
    if train_steps is not None:
        config = replace(config, train_steps=train_steps)
    return config


# Subcommands.

def cmd_gen_data(args) -> None:
    cfg = ModelConfig(args.layers, args.heads, args.d_model, args.seq_len, args.vocab,
                      _seed(args), args.family, args.task)
    cfg.build()
    gen_data(Path(args.out), cfg, args.n_train, args.n_val, args.n_test)


def cmd_attribute(args) -> None:
    params = ModelConfig.load(args.model).build()
    scores = attribute_step(params, read_batch(args.data), args.method, args.steps, args.metric, args.ifr)
    scores.save(args.out)


def cmd_warmstart(args) -> None:
    scores = EdgeScoreMap.load(args.scores)
    layers = ModelConfig.load(args.model).layers if args.model else None
    initialize_mask(scores, args.start_sparsity, layers).save(args.out)


def cmd_prune(args) -> None:
    params = ModelConfig.load(args.model).build()
    config = load_prune_config(args.config, _seed(args), args.train_steps)
    init = MaskParams.load(args.init) if args.init else None
    mask, trace = prune_step(params, read_batch(args.data), config, init)
    mask.save(args.out)
    if args.trace:
        trace.save(args.trace)


def cmd_signs(args) -> None:
    params = ModelConfig.load(args.model).build()
    eapig = EdgeScoreMap.load(args.from_eapig) if args.from_eapig else None
    mask = MaskParams.load(args.mask)
    signs_step(params, read_batch(args.data), mask, eapig, args.metric).save(args.out)


def cmd_ensemble(args) -> None:
    maps = [EdgeScoreMap.load(p) for p in args.inputs]
    names = [m.method for m in maps]
    if args.variant:
        if len(set(names)) != len(names):
            raise CliError("variant inputs must have distinct methods")
        out = make_submission(args.variant, dict(zip(names, maps)))
    else:
        weights = [float(w) for w in args.weights.split(",")] if args.weights else None
        out = reduce(maps, EnsembleSpec(names, args.reduce, weights, args.ifr))
    out.save(args.out)


def cmd_circuit(args) -> None:
    scores = EdgeScoreMap.load(args.scores)
    total = len(scores)
    if args.count is not None:
        k, frac = args.count, args.count / total
    else:
        k, frac = size_to_count(args.size, total), args.size
    pick = greedy_circuit if args.greedy else topk_circuit
    pick(scores, k, frac).save(args.out)


def cmd_eval(args) -> None:
    params = ModelConfig.load(args.model).build()
    batch = read_batch(args.data)
    evaluator = Ev.Evaluator(params, batch)
    if args.circuit:
        f = evaluator.faithfulness(CircuitSpec.load(args.circuit))
        line = f"f={f!r} CMD={abs(f - 1.0)!r}"
    else:
        scores = EdgeScoreMap.load(args.scores).aligned_to(params.topology.edges)
        curve = evaluator.curve(circuits_over_grid(scores, _grid(args.grid), args.greedy))
        if args.out:
            curve.save(args.out)
        line = Ev.summary_line(curve)
    print(line)


def cmd_hpo(args) -> None:
    params = ModelConfig.load(args.model).build()
    train_batch, val_batch = read_batch(args.train), read_batch(args.val)
    seed = _seed(args)
    eapig = A.eap_ig_inputs(params, train_batch, args.steps)
    objective = hpo.PruningObjective(params, train_batch, val_batch, eapig, args.train_steps)
    result = hpo.search(objective, hpo.GRID, args.budget, seed, args.workers, PruneConfig(seed=seed))
    result.save_report(args.report)
    result.best.save(args.out)
    t = result.best_trial
    print(f"best trial {t.index}: CPR={t.cpr!r} CMD={t.cmd!r} P={t.objective!r}")


def run_pipeline(variant: str, data_dir: Path, out: Path, seed: int, steps: int = 5,
                 prune_config: str | None = None, train_steps: int | None = None,
                 grid=SIZE_GRID, greedy: bool = False) -> str:
    """The three submission recipes, written step by step into ``out``."""
    if variant not in VARIANTS:
        raise CliError(f"unknown variant {variant!r}")
    out.mkdir(parents=True, exist_ok=True)
    params = ModelConfig.load(data_dir / "model.cfg").build()
    train_batch = read_batch(data_dir / "train.txt")
    test_batch = read_batch(data_dir / "test.txt")
    maps: dict[str, EdgeScoreMap] = {}
    if variant in (P_ENS, HYBRID_ENS):
        for method in EAP_FAMILY:
            maps[method] = attribute_step(params, train_batch, method, steps, M.LOGIT_DIFF, False)
            maps[method].save(out / f"{method}.scores")
    if variant in (S_ENS, HYBRID_ENS):
        eapig = maps.get(A.EAP_IG_INPUTS)
        if eapig is None:
            eapig = attribute_step(params, train_batch, A.EAP_IG_INPUTS, steps, M.LOGIT_DIFF, False)
            eapig.save(out / f"{A.EAP_IG_INPUTS}.scores")
        config = load_prune_config(prune_config, seed, train_steps)
        init = initialize_mask(eapig, config.start_edge_sparsity, params.topology.num_layers)
        init.save(out / "init.mask")
        mask, trace = prune_step(params, train_batch, config, init)
        mask.save(out / "pruned.mask")
        trace.save(out / "trace.csv")
        maps[S_ENS] = signs_step(params, train_batch, mask,
                                 eapig if config.signs_from_eapig else None, M.KL_DIV)
    final = make_submission(variant, maps)
    final.save(out / f"{variant}.scores")
    circuits = circuits_over_grid(final.aligned_to(params.topology.edges), grid, greedy)
    cdir = out / "circuits"
    cdir.mkdir(exist_ok=True)
    for c in circuits:
        c.save(cdir / f"{variant}_{c.size_fraction!r}.txt")
    curve = Ev.Evaluator(params, test_batch).curve(circuits)
    curve.save(out / "curve.csv")
    line = Ev.summary_line(curve)
    (out / "summary.txt").write_text(line + "\n")
    return line


def cmd_pipeline(args) -> None:
    seed = _seed(args)
    data_dir = Path(args.data_dir) if args.data_dir else Path(args.out) / "data"
    if not args.data_dir:
        gen_data(data_dir, ModelConfig(seed=seed), 40, 20, 40)
    print(run_pipeline(args.variant, data_dir, Path(args.out), seed, args.steps,
                       args.prune_config, args.train_steps, _grid(args.grid), args.greedy))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="circuit-ens", description="Circuit discovery with ensembled edge scores.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seed_flag(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default: ${SEED_ENV} or 0)")

    g = sub.add_parser("gen-data", help="write a synthetic planted-circuit dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-train", type=int, default=40)
    g.add_argument("--n-val", type=int, default=20)
    g.add_argument("--n-test", type=int, default=40)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--heads", type=int, default=2)
    g.add_argument("--d-model", type=int, default=8)
    g.add_argument("--seq-len", type=int, default=4)
    g.add_argument("--vocab", type=int, default=16)
    g.add_argument("--family", choices=M.FAMILIES, default=M.NONLINEAR)
    g.add_argument("--task", choices=("planted_copy", "random"), default="planted_copy")
    seed_flag(g)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("attribute", help="score every edge with one method")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--method", choices=A.METHODS, required=True)
    a.add_argument("--steps", type=int, default=5, help="integrated-gradient steps")
    a.add_argument("--metric", choices=M.METRICS, default=M.LOGIT_DIFF)
    a.add_argument("--ifr", action="store_true", help="normalize incoming scores per node")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attribute)

    w = sub.add_parser("warmstart", help="initialize a mask from scores")
    w.add_argument("--scores", required=True)
    w.add_argument("--start-sparsity", type=float, default=0.9)
    w.add_argument("--model", help="model config, for the layer count")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_warmstart)

    r = sub.add_parser("prune", help="train a hard-concrete edge mask")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--config", help="prune config (key=value lines)")
    r.add_argument("--init", help="initial mask; cold start when absent")
    r.add_argument("--train-steps", type=int)
    r.add_argument("--trace", help="per-step CSV trace")
    r.add_argument("--out", required=True)
    seed_flag(r)
    r.set_defaults(func=cmd_prune)

    s = sub.add_parser("signs", help="signed scores from a trained mask")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--from-eapig", help="take signs from this score file instead of gradients")
    s.add_argument("--metric", choices=M.METRICS, default=M.KL_DIV)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_signs)

    e = sub.add_parser("ensemble", help="combine score files")
    e.add_argument("--inputs", nargs="+", required=True, help="score files")
    e.add_argument("--reduce", choices=REDUCTIONS, default="mean")
    e.add_argument("--weights", help="comma-separated, for wmean")
    e.add_argument("--ifr", action="store_true")
    e.add_argument("--variant", choices=VARIANTS, help="assemble a submission variant by method name")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_ensemble)

    c = sub.add_parser("circuit", help="extract a circuit from scores")
    c.add_argument("--scores", required=True)
    size = c.add_mutually_exclusive_group(required=True)
    size.add_argument("--size", type=float, help="fraction of edges")
    size.add_argument("--count", type=int, help="number of edges")
    c.add_argument("--greedy", action="store_true")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_circuit)

    v = sub.add_parser("eval", help="faithfulness of a circuit or a score curve")
    v.add_argument("--model", required=True)
    v.add_argument("--data", required=True)
    target = v.add_mutually_exclusive_group(required=True)
    target.add_argument("--circuit")
    target.add_argument("--scores")
    v.add_argument("--grid", help="comma-separated size fractions")
    v.add_argument("--greedy", action="store_true")
    v.add_argument("--out", help="curve CSV")
    v.set_defaults(func=cmd_eval)

    h = sub.add_parser("hpo", help="grid search over pruning hyperparameters")
    h.add_argument("--model", required=True)
    h.add_argument("--train", required=True)
    h.add_argument("--val", required=True)
    h.add_argument("--budget", type=int, default=hpo.DEFAULT_BUDGET)
    h.add_argument("--workers", type=int, default=1)
    h.add_argument("--steps", type=int, default=5, help="integrated-gradient steps")
    h.add_argument("--train-steps", type=int, help="override train_steps for every trial")
    h.add_argument("--report", required=True)
    h.add_argument("--out", required=True, help="best prune config")
    seed_flag(h)
    h.set_defaults(func=cmd_hpo)

    q = sub.add_parser("pipeline", help="run a submission recipe end to end")
    q.add_argument("--variant", choices=VARIANTS, required=True)
    q.add_argument("--data-dir", help="output of gen-data; generated under --out when absent")
    q.add_argument("--prune-config")
    q.add_argument("--train-steps", type=int)
    q.add_argument("--steps", type=int, default=5, help="integrated-gradient steps")
    q.add_argument("--grid", help="comma-separated size fractions")
    q.add_argument("--greedy", action="store_true")
    q.add_argument("--out", required=True)
    seed_flag(q)
    q.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CliError, OSError, ValueError, KeyError, IndexError) as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
