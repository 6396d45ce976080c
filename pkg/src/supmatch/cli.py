"""Experiment orchestration: dataset preparation, clustering, adversarial
training, evaluation, baselines, theory checks, aggregation and plots.

Every artifact lands in a run directory keyed by the config hash, and any
run is reproducible from (config file, seed).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import pandas as pd
import torch

from .baselines import BaselineKind, make_baseline
from .bagging import BalancingScheme
from .clustering import (
    ClusterConfig,
    clustering_accuracy,
    fit_clustering,
    load_assignments,
    save_assignments,
)
from .config import ExperimentConfig
from .data import (
    build_adult,
    build_colored_mnist,
    build_synthetic_gmm,
    load_dataset_bundle,
    locate_adult_file,
    save_dataset_bundle,
)
from .data.datasets import BiasTable, apply_bias, balance_test_set
from .estimator import fit_linear_probe, predict_with_probe
from .exceptions import StateError, ValidationError
from .hierarchy import SupportSpec
from .metrics import MetricsReport, append_report_csv, evaluate_predictions
from .model import load_checkpoint
from .theory import GaussianSourceMixture, check_theorem2
from .training import ModelConfig, TrainConfig, train_loop

# Colorblind-safe palette for all plots (Okabe-Ito).
PLOT_PALETTE = (
    "#0072B2", "#E69F00", "#009E73", "#CC79A7", "#56B4E9", "#D55E00", "#F0E442", "#000000",
)


# -- dataset stage ----------------------------------------------------------


def build_datasets(config: ExperimentConfig):
    ds = config.dataset
    if ds.kind == "cmnist":
        return build_colored_mnist(
            digits=tuple(ds.digits),
            n_colors=ds.n_colors,
            setting=ds.setting,
            seed=ds.seed,
            root=ds.root,
            allow_substrate=ds.allow_substrate,
            missing_sources=[tuple(m) for m in ds.missing_sources],
        )
    if ds.kind == "adult":
        path, corpus = locate_adult_file(ds.root, allow_synthetic=ds.allow_substrate, seed=ds.seed)
        train, dep, test, manifest = build_adult(path, setting=ds.setting, seed=ds.seed)
        manifest["corpus"] = corpus
        return train, dep, test, manifest
    train, dep, test = build_synthetic_gmm(
        n_s=ds.n_s, n_y=ds.n_y, dim=ds.dim, cov_scale=ds.cov_scale,
        n_per_source=ds.n_per_source, seed=ds.seed,
    )
    if ds.setting in ("sb", "ms"):
        dropped = {(0, ds.n_y - 1)} if ds.setting == "sb" else {(0, y) for y in range(ds.n_y)}
        table = BiasTable(
            {(s, y): (0.0 if (s, y) in dropped else 1.0)
             for s in range(ds.n_s) for y in range(ds.n_y)}
        )
        train = apply_bias(train, table, ds.seed)
        test = balance_test_set(test, ds.seed)
    manifest = {"corpus": "synthetic-gmm", "setting": ds.setting, "seed": ds.seed}
    return train, dep, test, manifest


def data_dir_for(config: ExperimentConfig) -> Path:
    return Path(config.out_dir) / config.config_hash() / "data"


def stage_prepare(config: ExperimentConfig, force=False):
    """Build (or load) the dataset bundle for this config."""
    directory = data_dir_for(config)
    if directory.joinpath("manifest.json").exists() and not force:
        return load_dataset_bundle(directory)
    train, dep, test, manifest = build_datasets(config)
    save_dataset_bundle(directory, train, dep, test, manifest)
    return train, dep, test, manifest


def support_spec_for(config: ExperimentConfig, train) -> SupportSpec:
    declared = None
    if config.support is not None:
        block = config.support
        declared = {int(k): v for k, v in block["train_support"].items()}
        return SupportSpec.from_data(train.s, train.y, int(block["n_s"]), int(block["n_y"]), declared)
    return SupportSpec.from_data(train.s, train.y, train.n_s, train.n_y)


# -- run directories ---------------------------------------------------------


def run_dir_for(config: ExperimentConfig, method: str, seed: int) -> Path:
    return Path(config.out_dir) / config.config_hash() / method / f"seed{seed}"


def method_name(config: ExperimentConfig, scheme=None, instancewise=None) -> str:
    scheme = scheme or config.balancing.scheme
    instancewise = config.training.instancewise if instancewise is None else instancewise
    base = "supmatch_instancewise" if instancewise else "supmatch"
    return f"{base}_{BalancingScheme(scheme).value}"


def _write_run_record(run_dir: Path, config, seed, status, wall_clock, extra=None):
    record = {
        "config_hash": config.config_hash(),
        "seed": seed,
        "status": status,
        "wall_clock_seconds": round(wall_clock, 3),
    }
    if extra:
        record.update(extra)
    (run_dir / "manifest.json").write_text(json.dumps(record, indent=2, sort_keys=True))


# -- stages ------------------------------------------------------------------


def stage_cluster(config: ExperimentConfig, seed: int, data, run_dir: Path):
    """Fit the semi-supervised clusterer and persist assignments."""
    train, deployment, _, _ = data
    spec = support_spec_for(config, train)
    cc = config.clustering
    cluster_config = ClusterConfig(
        n_clusters=cc.n_clusters, rank_depth=cc.rank_depth, embed_dim=cc.embed_dim,
        hidden=tuple(cc.hidden), level_depth=cc.level_depth,
        pretrain_epochs=cc.pretrain_epochs, cluster_epochs=cc.cluster_epochs,
        batch_size=cc.batch_size, lr=cc.lr, perturb_scale=cc.perturb_scale, seed=seed,
    )
    _, assignment = fit_clustering(train, deployment, spec, cluster_config)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_assignments(run_dir / "cluster_assignments.jsonl", assignment)
    with deployment.oracle_labels():
        sources = deployment.hidden_y * deployment.n_s + deployment.hidden_s
    accuracy = clustering_accuracy(assignment, sources)
    (run_dir / "clustering.json").write_text(
        json.dumps({"clustering_accuracy": accuracy, "seed": seed}, sort_keys=True)
    )
    return assignment, accuracy


def _model_config(config: ExperimentConfig, manifest) -> ModelConfig:
    blocks = manifest.get("feature_blocks")
    return ModelConfig(
        encoding_size=config.model.encoding_size,
        hidden=tuple(config.model.hidden),
        level_depth=config.model.level_depth,
        binarize_s=config.model.binarize_s,
        feature_blocks=[tuple(b) for b in blocks] if blocks else None,
    )


def _train_config(config: ExperimentConfig, seed, scheme=None, instancewise=None) -> TrainConfig:
    t = config.training
    return TrainConfig(
        bag_size=config.balancing.bag_size,
        bags_per_batch=config.balancing.bags_per_batch,
        iterations=t.iterations,
        lambda_y=t.lambda_y, lambda_s=t.lambda_s, lambda_adv=t.lambda_adv,
        embed_l2=t.embed_l2, disc_updates=t.disc_updates, stop_gradient=t.stop_gradient,
        attention_kind=t.attention_kind, attention_embed_dim=t.attention_embed_dim,
        disc_pre_hidden=tuple(t.disc_pre_hidden), disc_post_hidden=tuple(t.disc_post_hidden),
        lr_encoder=t.lr_encoder, lr_predictors=t.lr_predictors, lr_disc=t.lr_disc,
        scheme=BalancingScheme(scheme or config.balancing.scheme),
        instancewise=t.instancewise if instancewise is None else instancewise,
        checkpoint_every=t.checkpoint_every, seed=seed,
    )


def stage_train(config: ExperimentConfig, seed: int, data, run_dir: Path,
                scheme=None, instancewise=None):
    """Adversarial training; expects cluster assignments when needed."""
    train, deployment, _, manifest = data
    spec = support_spec_for(config, train)
    train_config = _train_config(config, seed, scheme, instancewise)
    if train_config.scheme is BalancingScheme.CLUSTER_BALANCED:
        path = run_dir / "cluster_assignments.jsonl"
        if not path.exists():
            raise StateError(f"no cluster assignments at {path}; run the cluster stage first")
        deployment = deployment.with_cluster_ids(load_assignments(path).clusters)
    result = train_loop(
        train, deployment, spec, train_config,
        model_config=_model_config(config, manifest), run_dir=run_dir,
    )
    return result


def stage_evaluate(config: ExperimentConfig, seed: int, data, run_dir: Path,
                   scheme=None, instancewise=None, model=None) -> MetricsReport:
    """Evaluate a trained run on the balanced test set; writes metrics.json."""
    train, _, test, manifest = data
    spec = support_spec_for(config, train)
    if model is None:
        final = run_dir / "checkpoints" / f"step_{_train_config(config, seed).iterations:06d}"
        if not final.exists():
            raise StateError(f"no final checkpoint at {final}; run the train stage first")
        train_config = _train_config(config, seed, scheme, instancewise)
        model_config = _model_config(config, manifest)
        model = model_config.build(tuple(train.features.shape[1:]), spec.n_s, spec.n_y)
        load_checkpoint(final, {"model": model})
        model.eval()
    probe = fit_linear_probe(
        model, train, spec,
        epochs=config.evaluation.probe_epochs, lr=config.evaluation.probe_lr,
        batch_size=config.evaluation.probe_batch, seed=seed,
    )
    predictions = predict_with_probe(model, probe, test.features)
    clustering_path = run_dir / "clustering.json"
    cluster_acc = None
    if clustering_path.exists():
        cluster_acc = json.loads(clustering_path.read_text())["clustering_accuracy"]
    report = evaluate_predictions(predictions, test.y, test.s, clustering_accuracy=cluster_acc)
    (run_dir / "metrics.json").write_text(report.to_json())
    append_report_csv(
        run_dir.parent.parent / "reports.csv",
        method_name(config, scheme, instancewise), seed, report,
    )
    return report


def stage_baseline(config: ExperimentConfig, seed: int, data, kind, run_dir: Path) -> MetricsReport:
    """Train and evaluate one baseline; writes metrics.json."""
    train, deployment, test, _ = data
    spec = support_spec_for(config, train)
    bp = config.baseline_params
    kind = BaselineKind(kind)
    kwargs = {"epochs": bp.epochs, "lr": bp.lr, "batch_size": bp.batch_size,
              "widths": tuple(bp.widths), "mlp_hidden": bp.mlp_hidden, "seed": seed}
    if kind is BaselineKind.DRO:
        kwargs.update(eta=bp.dro_eta, eta_grid=tuple(bp.dro_eta_grid))
    elif kind in (BaselineKind.GDRO, BaselineKind.GDRO_LABEL_ORACLE):
        kwargs.update(step_size=bp.gdro_step_size)
    elif kind is BaselineKind.LFF:
        kwargs.update(q=bp.lff_q)
    elif kind is BaselineKind.GEORGE:
        kwargs = {"epochs": bp.epochs, "lr": bp.lr, "batch_size": bp.batch_size,
                  "widths": tuple(bp.widths), "mlp_hidden": bp.mlp_hidden, "seed": seed,
                  "gdro_step_size": bp.gdro_step_size}
    baseline = make_baseline(kind, **kwargs)
    needs_deployment = kind in (
        BaselineKind.ERM_LABEL_ORACLE, BaselineKind.GDRO_LABEL_ORACLE, BaselineKind.GEORGE
    )
    baseline.fit(train, spec, deployment if needs_deployment else None)
    report = evaluate_predictions(baseline.predict(test.features), test.y, test.s)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "metrics.json").write_text(report.to_json())
    append_report_csv(run_dir.parent.parent / "reports.csv", kind.value, seed, report)
    return report


def run_single_seed(config: ExperimentConfig, seed: int, scheme=None) -> dict:
    """prepare-data -> (cluster) -> train -> evaluate -> baselines."""
    started = time.time()
    data = stage_prepare(config)
    scheme = BalancingScheme(scheme or config.balancing.scheme)
    method = method_name(config, scheme)
    run_dir = run_dir_for(config, method, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save_copy(run_dir / "config.yaml")
    outputs = {}
    if scheme is BalancingScheme.CLUSTER_BALANCED:
        _, accuracy = stage_cluster(config, seed, data, run_dir)
        outputs["clustering_accuracy"] = accuracy
    stage_train(config, seed, data, run_dir, scheme=scheme)
    report = stage_evaluate(config, seed, data, run_dir, scheme=scheme)
    outputs["metrics"] = json.loads(report.to_json())
    for kind in config.baselines:
        b_dir = run_dir_for(config, str(kind), seed)
        b_report = stage_baseline(config, seed, data, kind, b_dir)
        _write_run_record(b_dir, config, seed, "finished", time.time() - started)
        outputs[str(kind)] = json.loads(b_report.to_json())
    _write_run_record(run_dir, config, seed, "finished", time.time() - started,
                      extra={k: v for k, v in outputs.items() if k == "clustering_accuracy"})
    return outputs


def run_experiment(config: ExperimentConfig, seeds=None, jobs=1, scheme=None):
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    stage_prepare(config)  # build once before any fan-out
    if jobs > 1:
        payload = config.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_seed_job, payload, seed, scheme) for seed in seeds]
            return [f.result() for f in futures]
    return [run_single_seed(config, seed, scheme) for seed in seeds]


def _run_seed_job(config_payload: dict, seed: int, scheme):
    return run_single_seed(ExperimentConfig.from_mapping(config_payload), seed, scheme)


# -- aggregation and plots ---------------------------------------------------


def aggregate_reports(run_glob, force=False) -> pd.DataFrame:
    """Collect metrics.json files under a glob into one tidy frame."""
    rows = []
    for metrics_path in sorted(Path().glob(str(run_glob))):
        if metrics_path.name != "metrics.json":
            metrics_path = metrics_path / "metrics.json"
        if not metrics_path.exists():
            continue
        report = json.loads(metrics_path.read_text())
        run_dir = metrics_path.parent
        manifest = {}
        if (run_dir / "manifest.json").exists():
            manifest = json.loads((run_dir / "manifest.json").read_text())
        seed_name = run_dir.name
        rows.append({
            "method": run_dir.parent.name,
            "seed": manifest.get("seed", seed_name.replace("seed", "")),
            "config_hash": manifest.get("config_hash", run_dir.parent.parent.name),
            **{k: v for k, v in report.items() if not isinstance(v, (dict, list))},
        })
    if not rows:
        raise ValidationError(f"no finalized run records match {run_glob}")
    frame = pd.DataFrame(rows)
    hashes = frame["config_hash"].unique()
    if len(hashes) > 1 and not force:
        raise ValidationError(
            f"refusing to aggregate mixed config hashes {sorted(hashes)}; pass --force"
        )
    return frame


def summarize_reports(frame: pd.DataFrame) -> pd.DataFrame:
    """Median / IQR / outlier count per method and metric."""
    metric_cols = [c for c in frame.columns
                   if c not in ("method", "seed", "config_hash") and frame[c].notna().any()]
    records = []
    for method, group in frame.groupby("method"):
        for col in metric_cols:
            values = group[col].dropna().astype(float)
            if values.empty:
                continue
            q1, q3 = values.quantile(0.25), values.quantile(0.75)
            iqr = q3 - q1
            outliers = ((values < q1 - 1.5 * iqr) | (values > q3 + 1.5 * iqr)).sum()
            records.append({
                "method": method, "metric": col, "median": values.median(),
                "iqr": iqr, "n": len(values), "outliers": int(outliers),
            })
    return pd.DataFrame(records)


def emit_box_plots(frame: pd.DataFrame, out_dir, config_hash="") -> list:
    """One box plot per metric comparing methods; deterministic rendering."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    metric_cols = [c for c in frame.columns
                   if c not in ("method", "seed", "config_hash") and frame[c].notna().any()]
    methods = sorted(frame["method"].unique())
    for col in metric_cols:
        data = [frame.loc[frame["method"] == m, col].dropna().astype(float) for m in methods]
        if all(d.empty for d in data):
            continue
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(methods), 3.2))
        box = ax.boxplot([d.values for d in data], tick_labels=methods, patch_artist=True)
        for patch, color in zip(box["boxes"], PLOT_PALETTE * 4):
            patch.set_facecolor(color)
        ax.set_ylabel(col)
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        suffix = f"_{config_hash}" if config_hash else ""
        path = out_dir / f"{col}{suffix}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def dump_reconstructions(model, dataset, count, out_path):
    """4-column image grid: original, reconstruction, subgroup code zeroed,
    invariant code zeroed."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if dataset.features.ndim != 4:
        raise ValidationError("reconstruction grids are only defined for image datasets")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    count = int(count)
    if count == 0:
        fig = plt.figure(figsize=(2, 1))
        fig.savefig(out_path)
        plt.close(fig)
        return out_path
    x = dataset.features[:count]
    with torch.no_grad():
        enc = model.encode(x)
        full = model.decode(enc.z, enc.s_tilde)
        z_only = model.decode(enc.z, torch.zeros_like(enc.s_tilde))
        s_only = model.decode(torch.zeros_like(enc.z), enc.s_tilde)
    columns = [x, full, z_only, s_only]
    fig, axes = plt.subplots(count, 4, figsize=(6, 1.6 * count), squeeze=False)
    for row in range(count):
        for col in range(4):
            axes[row][col].imshow(np.transpose(columns[col][row].numpy(), (1, 2, 0)).clip(0, 1))
            axes[row][col].axis("off")
    for label, ax in zip(["original", "reconstruction", "z only", "s-code only"], axes[0]):
        ax.set_title(label, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


# -- click entry points ------------------------------------------------------


def _parse_seeds(seed, seeds):
    if seeds:
        return [int(v) for v in str(seeds).split(",") if v != ""]
    if seed is not None:
        return [int(seed)]
    return None


@click.group()
def main():
    """Support-matching experiment runner."""


@main.command("prepare-data")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--force", is_flag=True, default=False)
def cmd_prepare_data(config_path, force):
    config = ExperimentConfig.from_file(config_path)
    _, _, _, manifest = stage_prepare(config, force=force)
    click.echo(json.dumps({"data_dir": str(data_dir_for(config)), "corpus": manifest.get("corpus")}))


@main.command("cluster")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
def cmd_cluster(config_path, seed):
    config = ExperimentConfig.from_file(config_path)
    data = stage_prepare(config)
    run_dir = run_dir_for(config, method_name(config, "cluster_balanced"), seed)
    _, accuracy = stage_cluster(config, seed, data, run_dir)
    click.echo(json.dumps({"clustering_accuracy": accuracy}))


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--scheme", type=str, default=None)
def cmd_train(config_path, seed, scheme):
    config = ExperimentConfig.from_file(config_path)
    data = stage_prepare(config)
    run_dir = run_dir_for(config, method_name(config, scheme), seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save_copy(run_dir / "config.yaml")
    result = stage_train(config, seed, data, run_dir, scheme=scheme)
    click.echo(json.dumps({"final_checkpoint": str(result.checkpoint_dir)}))


@main.command("evaluate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--scheme", type=str, default=None)
def cmd_evaluate(config_path, seed, scheme):
    config = ExperimentConfig.from_file(config_path)
    data = stage_prepare(config)
    run_dir = run_dir_for(config, method_name(config, scheme), seed)
    report = stage_evaluate(config, seed, data, run_dir, scheme=scheme)
    click.echo(report.to_json())


@main.command("baseline")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--kind", type=str, required=True)
def cmd_baseline(config_path, seed, kind):
    config = ExperimentConfig.from_file(config_path)
    data = stage_prepare(config)
    run_dir = run_dir_for(config, kind, seed)
    report = stage_baseline(config, seed, data, kind, run_dir)
    click.echo(report.to_json())


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--seeds", type=str, default=None)
@click.option("--jobs", type=int, default=1)
@click.option("--scheme", type=str, default=None)
def cmd_run(config_path, seed, seeds, jobs, scheme):
    config = ExperimentConfig.from_file(config_path)
    outputs = run_experiment(config, seeds=_parse_seeds(seed, seeds), jobs=jobs, scheme=scheme)
    click.echo(json.dumps({"runs": len(outputs)}))


@main.command("theory-check")
@click.option("--which", type=click.Choice(["posterior", "estimation-error"]), required=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--seeds", type=int, default=10)
def cmd_theory_check(which, out, seeds):
    if which == "posterior":
        from .hierarchy import SupportSpec
        from .theory import check_proposition1, make_matched_construction, make_violated_construction

        spec = SupportSpec(n_s=2, n_y=2, train_support=(frozenset({0, 1}), frozenset({1})))
        matched = check_proposition1(make_matched_construction(4, spec, seed=0))
        violated = check_proposition1(make_violated_construction(4, spec, seed=0))
        payload = {
            "matched_passed": matched.passed(),
            "matched_posterior_deviation": matched.posterior_deviation,
            "violated_flagged": not violated.applicable,
        }
    else:
        from .data.synthetic import default_source_means

        spec = SupportSpec.full(2, 2)
        mixture = GaussianSourceMixture(
            means=default_source_means(2, 2, 2), cov_scale=0.25, spec=spec
        )
        report = check_theorem2(mixture, n_seeds=seeds)
        payload = {"slope": report.slope, "median_errors": report.median_errors}
    text = json.dumps(payload, sort_keys=True)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command("aggregate")
@click.option("--runs", "run_glob", required=True, type=str)
@click.option("--out", type=click.Path(), default=None)
@click.option("--force", is_flag=True, default=False)
def cmd_aggregate(run_glob, out, force):
    frame = aggregate_reports(run_glob, force=force)
    summary = summarize_reports(frame)
    if out:
        summary.to_csv(out, index=False)
    click.echo(summary.to_string(index=False))


@main.command("plot")
@click.option("--runs", "run_glob", required=True, type=str)
@click.option("--out", type=click.Path(), required=True)
@click.option("--force", is_flag=True, default=False)
def cmd_plot(run_glob, out, force):
    frame = aggregate_reports(run_glob, force=force)
    config_hash = frame["config_hash"].iloc[0] if "config_hash" in frame else ""
    written = emit_box_plots(frame, out, config_hash=config_hash)
    if not written:
        click.echo("warning: empty summary, nothing plotted")
    else:
        click.echo(json.dumps({"plots": [str(p) for p in written]}))


@main.command("dump-recons")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--scheme", type=str, default=None)
@click.option("--count", type=int, default=8)
@click.option("--out", type=click.Path(), default=None)
def cmd_dump_recons(config_path, seed, scheme, count, out):
    config = ExperimentConfig.from_file(config_path)
    data = stage_prepare(config)
    train, _, test, manifest = data
    spec = support_spec_for(config, train)
    run_dir = run_dir_for(config, method_name(config, scheme), seed)
    final = run_dir / "checkpoints" / f"step_{config.training.iterations:06d}"
    if not final.exists():
        raise StateError(f"no final checkpoint at {final}")
    model = _model_config(config, manifest).build(tuple(train.features.shape[1:]), spec.n_s, spec.n_y)
    load_checkpoint(final, {"model": model})
    model.eval()
    out = Path(out) if out else run_dir / "plots" / "reconstructions.png"
    path = dump_reconstructions(model, test, count, out)
    click.echo(json.dumps({"grid": str(path)}))


if __name__ == "__main__":
    main()
