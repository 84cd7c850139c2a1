"""End-to-end experiment pipeline: ingest, cluster, federate, evaluate."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__, clustering, dataio, evaluate, features, fed, nn
from .config import ExperimentConfig
from .errors import DataError
from .evaluate import TYPE_ALL_UPDATES

HALF_HOUR = dataio.HALF_HOUR


@dataclass
class HouseholdData:
    """Everything the pipeline needs about one household."""

    household_id: str
    cluster: int
    train_samples: list  # raw-kWh WindowSamples
    test_samples: list
    normalizer: features.Normalizer
    train_mean: float
    inputs: np.ndarray  # normalized training windows
    targets: np.ndarray


def _load_series(cfg: ExperimentConfig) -> tuple[list[dataio.MeterSeries], int]:
    if cfg.data_csv is not None:
        path = Path(cfg.data_csv)
        if not path.exists():
            raise DataError(f"data csv not found: {path}")
        with open(path) as fh:
            result = dataio.parse_meter_csv(fh)
        return result.series, result.rows_skipped
    synth = cfg.synthetic
    seed = cfg.seed if synth.seed is None else synth.seed
    series = dataio.generate_synthetic(
        synth.households, synth.days, seed,
        noise_amp=synth.noise_amp, seasonal_amp=synth.seasonal_amp,
    )
    return series, 0


def _split_boundary(cfg: ExperimentConfig, series: list[dataio.MeterSeries]) -> datetime:
    if cfg.split_boundary is not None:
        return cfg.split_boundary
    first = min(s.readings[0].timestamp for s in series)
    last = max(s.readings[-1].timestamp for s in series)
    span = (last - first).total_seconds()
    boundary = first + timedelta(seconds=cfg.split_fraction * span)
    # snap to the half-hour grid
    offset = (boundary - first).total_seconds()
    snapped = round(offset / HALF_HOUR.total_seconds()) * HALF_HOUR.total_seconds()
    return first + timedelta(seconds=snapped)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run the configured pipeline; returns the manifest dict."""
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    skipped_households: list[str] = []

    series, rows_skipped = _load_series(cfg)
    if not series:
        raise DataError("no households in input data")
    kept, _removed = dataio.filter_outliers(series, cfg.outlier_low, cfg.outlier_high)
    with open(out / "audit.json", "w") as fh:
        json.dump(dataio.audit_summary(len(series), len(kept), rows_skipped), fh, indent=2)
    if not kept:
        raise DataError("outlier filter removed every household")

    boundary = _split_boundary(cfg, kept)
    households: dict[str, HouseholdData] = {}
    stats_by_id: dict[str, dataio.HouseholdStats] = {}
    splits: dict[str, dataio.SplitSeries] = {}
    for s in kept:
        try:
            split = dataio.chronological_split(s, boundary)
        except Exception:
            skipped_households.append(s.household_id)
            continue
        train_samples = features.make_windows(split.train, cfg.window, cfg.stride)
        test_samples = features.make_windows(split.test, cfg.window, cfg.stride)
        if not train_samples or not test_samples:
            skipped_households.append(s.household_id)
            continue
        splits[s.household_id] = split
        # clustering uses train-period statistics only, to avoid test leakage
        stats_by_id[s.household_id] = dataio.compute_stats(split.train)

    if len(stats_by_id) < max(2, cfg.clusters):
        raise DataError(
            f"only {len(stats_by_id)} usable households for k={cfg.clusters} clusters"
        )
    cluster_of, _assignment = clustering.assign_clusters(
        stats_by_id, k=cfg.clusters, seed=cfg.seed
    )
    with open(out / "clusters.csv", "w") as fh:
        clustering.write_assignment_csv(cluster_of, fh)

    for hid, split in splits.items():
        train_samples = features.make_windows(split.train, cfg.window, cfg.stride)
        test_samples = features.make_windows(split.test, cfg.window, cfg.stride)
        norm = features.fit_normalizer(train_samples)
        X, y = features.stack_samples(train_samples)
        households[hid] = HouseholdData(
            household_id=hid,
            cluster=cluster_of[hid],
            train_samples=train_samples,
            test_samples=test_samples,
            normalizer=norm,
            train_mean=stats_by_id[hid].mean_hh,
            inputs=np.asarray(norm.apply(X)),
            targets=np.asarray(norm.apply(y)),
        )

    spec = nn.LayerSpec(sizes=(cfg.window, 16, 8, 4, 1))
    run_federated = cfg.mode in ("federated", "both")
    run_centralized = cfg.mode in ("centralized", "both")

    local_records: list[evaluate.PredictionRecord] = []
    global_records: list[evaluate.PredictionRecord] = []
    central_records: list[evaluate.PredictionRecord] = []
    type_of: dict[str, str] = {}
    participation_count: dict[str, int] = {}
    cluster_summaries: dict[int, dict] = {}

    for c in sorted(set(cluster_of.values())):
        members = sorted(h for h in households if households[h].cluster == c)
        if not members:
            continue
        member_data = [households[h] for h in members]
        fed_cfg = fed.FederationConfig(
            rounds=cfg.federation.rounds,
            clients_per_round=cfg.federation.clients_per_round,
            local_epochs=cfg.federation.local_epochs,
            batch_size=cfg.federation.batch_size,
            client_lr=cfg.federation.client_lr,
            server_lr=cfg.federation.server_lr,
            seed=fed.mix_seed(cfg.seed, "cluster", c),
            convergence_epsilon=cfg.federation.convergence_epsilon,
            convergence_patience=cfg.federation.convergence_patience,
        )
        summary: dict = {"members": len(members)}

        if run_federated:
            clients = fed.make_clients([(h.household_id, h.inputs, h.targets) for h in member_data])
            ckpt = None
            if not cfg.lean:
                ckpt = out / "checkpoints" / f"cluster{c:02d}"
                ckpt.mkdir(parents=True, exist_ok=True)
            global_model, reports, clients = fed.run_federation(
                clients, spec, fed_cfg, checkpoint_dir=ckpt
            )
            with open(out / f"rounds_cluster{c:02d}.jsonl", "w") as fh:
                fed.write_round_log(reports, fh)
            rounds_run = len(reports)
            participation = {cl.household_id: cl.rounds_participated for cl in clients}
            types = evaluate.derive_household_types(
                participation, rounds_run,
                {h.household_id: h.train_mean for h in member_data},
            )
            type_of.update(types)
            participation_count.update(
                {hid: len(rounds) for hid, rounds in participation.items()}
            )
            client_params = {cl.household_id: cl.params for cl in clients}
            for h in member_data:
                local_records.extend(
                    evaluate.predict_records(
                        client_params[h.household_id], h.normalizer,
                        h.test_samples, h.household_id,
                    )
                )
                global_records.extend(
                    evaluate.predict_records(
                        global_model.params, h.normalizer, h.test_samples, h.household_id
                    )
                )
            summary["federated_rounds"] = rounds_run
            summary["final_global_loss"] = reports[-1].global_loss
            _write_forecast(cfg, out, c, global_model, member_data[0])

        if run_centralized:
            clients = fed.make_clients([(h.household_id, h.inputs, h.targets) for h in member_data])
            central_model, epoch_losses = fed.run_centralized(clients, spec, fed_cfg)
            with open(out / f"centralized_cluster{c:02d}.json", "w") as fh:
                json.dump({"epoch_losses": epoch_losses}, fh, indent=2)
            for h in member_data:
                central_records.extend(
                    evaluate.predict_records(
                        central_model.params, h.normalizer, h.test_samples, h.household_id
                    )
                )
            summary["centralized_final_loss"] = epoch_losses[-1] if epoch_losses else None
        cluster_summaries[c] = summary

    if not run_federated:
        type_of = {hid: TYPE_ALL_UPDATES for hid in households}
        participation_count = {hid: cfg.federation.rounds for hid in households}

    # primary stratified report: per-client models when federated, else central
    report_records = local_records if run_federated else central_records
    rows = evaluate.stratified_report(report_records, cluster_of, type_of)
    with open(out / "metrics.csv", "w") as fh:
        evaluate.write_metrics_csv(rows, fh)

    headline_records = global_records if run_federated else central_records
    with open(out / "predictions.csv", "w") as fh:
        evaluate.write_predictions_csv(headline_records, fh)

    summary_json = _metrics_summary(
        cfg, headline_records, cluster_of, cluster_summaries, real_data=cfg.data_csv is not None
    )
    with open(out / "metrics.json", "w") as fh:
        json.dump(summary_json, fh, indent=2, sort_keys=True)

    _write_households_csv(out, households, type_of, participation_count)
    if cfg.mode == "both":
        _write_comparison_csv(out, global_records, central_records, cluster_of)

    manifest = {
        "config": cfg.resolved(),
        "config_sha256": cfg.content_hash(),
        "package_version": __version__,
        "split_boundary": boundary.isoformat(),
        "skipped_households": sorted(skipped_households),
        "wall_time_sec": time.perf_counter() - t0,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _metrics_summary(cfg, records, cluster_of, cluster_summaries, real_data: bool) -> dict:
    grand_rmse = evaluate.rmse(records)
    grand_mae = evaluate.mae(records)
    try:
        grand_mape, mape_excluded = evaluate.mape(records)
    except Exception:
        grand_mape, mape_excluded = None, len(records)
    per_cluster = {}
    by_cluster: dict[int, list] = {}
    for r in records:
        by_cluster.setdefault(cluster_of[r.household_id], []).append(r)
    for c in sorted(by_cluster):
        per_cluster[str(c)] = {
            "rmse": evaluate.rmse(by_cluster[c]),
            "mae": evaluate.mae(by_cluster[c]),
            "n": len(by_cluster[c]),
        }
    summary = {
        "mode": cfg.mode,
        "grand_rmse": grand_rmse,
        "grand_mae": grand_mae,
        "grand_mape": grand_mape,
        "mape_excluded": mape_excluded,
        "per_cluster": per_cluster,
        "cluster_runs": {str(c): s for c, s in cluster_summaries.items()},
    }
    if real_data:
        summary["reference_check"] = evaluate.reference_check(grand_rmse, grand_mape)
    return summary


def _write_households_csv(out: Path, households, type_of, participation_count) -> None:
    import csv

    with open(out / "households.csv", "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["household_id", "cluster", "type", "rounds_participated", "n_train", "n_test"]
        )
        for hid in sorted(households):
            h = households[hid]
            writer.writerow(
                [
                    hid, h.cluster, type_of.get(hid, ""), participation_count.get(hid, 0),
                    len(h.train_samples), len(h.test_samples),
                ]
            )


def _write_forecast(cfg, out: Path, cluster: int, global_model, household: HouseholdData) -> None:
    """Plot-ready multi-day rolling forecast for one representative household."""
    import csv

    samples = household.test_samples
    steps = min(cfg.forecast_steps, len(samples))
    if steps < 1:
        return
    seed_window = samples[0].input
    forecast = evaluate.rolling_forecast(
        global_model.params, household.normalizer, seed_window, steps
    )
    with open(out / f"forecast_cluster{cluster:02d}.csv", "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "actual_kwh", "forecast_kwh"])
        for s, p in zip(samples[:steps], forecast):
            writer.writerow(
                [s.target_timestamp.strftime("%Y-%m-%d %H:%M:%S"),
                 f"{s.target:.12g}", f"{float(p):.12g}"]
            )


def _write_comparison_csv(out: Path, fed_records, central_records, cluster_of) -> None:
    """Per-cluster monthly RMSE, federated vs centralized."""
    import csv

    def monthly(records):
        groups: dict[tuple[int, int], list] = {}
        for r in records:
            groups.setdefault((cluster_of[r.household_id], r.target_timestamp.month), []).append(r)
        return {key: evaluate.rmse(rs) for key, rs in groups.items()}

    fed_rmse = monthly(fed_records)
    cen_rmse = monthly(central_records)
    with open(out / "comparison.csv", "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster", "month", "rmse_federated", "rmse_centralized"])
        for key in sorted(set(fed_rmse) | set(cen_rmse)):
            f = fed_rmse.get(key)
            g = cen_rmse.get(key)
            writer.writerow(
                [key[0], key[1],
                 "" if f is None else f"{f:.12g}",
                 "" if g is None else f"{g:.12g}"]
            )
