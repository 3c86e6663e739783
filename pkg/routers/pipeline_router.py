"""
Command handlers for the pipeline CLI.
Each handler takes a validated PipelineConfig, writes its artifacts under
OUTPUT_DIR and returns {artifact name: path}.
"""
import logging
import os
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config import PipelineConfig, require_paths
from errors import ConfigError, DataError
from explain.exports import (
    beeswarm_table,
    default_timesteps,
    heatmap_frame,
    importance_heatmap,
    render_heatmap_svg,
    scatter_table,
    top_feature_frame,
)
from explain.shapley import array_digest, explain_day, mean_background, missing_background, model_predictor
from features.binning import FEATURES, BinningConfig, DaySequence, bin_to_days, daily_volume, read_sequences, write_sequences
from features.codec import fit, load_codec, save_codec, transform_many
from features.manifest import load_manifest, write_manifest
from helpers import derive_seeds, read_csv, read_json, write_csv, write_json, write_sidecar
from ingest.pseudonym import PseudonymKey, align_manifest, mapping_frame, pseudonymize
from ingest.zeek import dump_json_lines, dump_tsv, parse_file, write_lines
from phase.model import PhaseModelConfig, load_model, predict_proba, save_model
from scoring.bands import Band
from scoring.scorer import PhaseScore, band_histogram, score_days, scores_frame, summarize_all
from synth.personas import default_benchmark, persona_study
from training.metrics import evaluate
from training.trainer import TrainSettings, cross_validate, train_final

logger = logging.getLogger(__name__)

Handler = Callable[[PipelineConfig], Dict[str, str]]
COMMANDS: Dict[str, Handler] = {}


def command(name: str):
    def register(handler: Handler) -> Handler:
        COMMANDS[name] = handler
        return handler
    return register


# ----------------------
# Shared loaders
# ----------------------
def _labeled(sequences: List[DaySequence], command_name: str) -> List[DaySequence]:
    labeled = [s for s in sequences if s.label is not None]
    if not labeled:
        raise DataError(f"'{command_name}' found no labeled day sequences; featurize with --manifest")
    return labeled


def _sequences(config: PipelineConfig, command_name: str) -> List[DaySequence]:
    require_paths(config, command_name, "sequences_path")
    sequences = read_sequences(config.sequences_path)
    if not sequences:
        raise DataError(f"sequence archive {config.sequences_path} is empty")
    return sequences


def _model_inputs(config: PipelineConfig, command_name: str):
    require_paths(config, command_name, "model_path", "codec_path", "sequences_path")
    model = load_model(config.model_path)
    codec = load_codec(config.codec_path)
    return model, codec, _sequences(config, command_name)


# ----------------------
# synth
# ----------------------
@command("synth")
def run_synth(config: PipelineConfig) -> Dict[str, str]:
    """Generate the benchmark or persona corpus plus its label manifest."""
    if config.synth_corpus == "benchmark":
        corpus = default_benchmark(seed=config.seed)
    else:
        corpus = persona_study(seed=config.seed, entities=config.persona_entities, days=config.persona_days)

    corpus_path = config.out(f"corpus.{config.synth_format}")
    lines = dump_tsv(corpus.records) if config.synth_format == "tsv" else dump_json_lines(corpus.records)
    os.makedirs(config.output_dir, exist_ok=True)
    write_lines(corpus_path, lines)
    write_sidecar(corpus_path, config.provenance(), corpus=config.synth_corpus, records=len(corpus.records))
    manifest_path = write_manifest(config.out("manifest.csv"), corpus.manifest)
    write_sidecar(manifest_path, config.provenance(), entities=len(corpus.manifest.entries))

    print(f"✅ Synthesized {config.synth_corpus} corpus: {len(corpus.records)} records, "
          f"{len(corpus.manifest.entries)} entities -> {corpus_path}")
    return {"corpus": corpus_path, "manifest": manifest_path}


# ----------------------
# ingest
# ----------------------
@command("ingest")
def run_ingest(config: PipelineConfig) -> Dict[str, str]:
    """Parse Zeek conn logs into the canonical records dump, optionally pseudonymized."""
    require_paths(config, "ingest", "input_path")
    parsed = parse_file(config.input_path, config.input_format)
    records = parsed.records
    artifacts: Dict[str, str] = {}

    if config.pseudonymize:
        if not config.pseudonym_key:
            raise ConfigError("'ingest --pseudonymize' requires PSEUDONYM_KEY (64 hex characters) in the config file")
        key = PseudonymKey.from_hex(config.pseudonym_key, config.pseudonym_salt)
        records, mapping = pseudonymize(records, key)
        artifacts["pseudonyms"] = write_csv(config.out("pseudonyms.csv"), mapping_frame(mapping), config.provenance())
        if config.manifest_path:
            require_paths(config, "ingest", "manifest_path")
            aligned = align_manifest(load_manifest(config.manifest_path), mapping)
            artifacts["manifest"] = write_manifest(config.out("manifest.csv"), aligned)
            write_sidecar(artifacts["manifest"], config.provenance(), entities=len(aligned.entries))

    records_path = config.out("records.jsonl")
    os.makedirs(config.output_dir, exist_ok=True)
    write_lines(records_path, dump_json_lines(records))
    write_sidecar(records_path, config.provenance(), records=len(records), skipped=parsed.skipped)
    artifacts["records"] = records_path

    if parsed.issues:
        issues = pd.DataFrame([i.model_dump() for i in parsed.issues], columns=["line_no", "reason"])
        artifacts["issues"] = write_csv(config.out("ingest_issues.csv"), issues, config.provenance())
        print(f"⚠️ Skipped {parsed.skipped} malformed line(s), see {artifacts['issues']}")
    print(f"✅ Ingested {len(records)} records -> {records_path}")
    return artifacts


# ----------------------
# featurize
# ----------------------
@command("featurize")
def run_featurize(config: PipelineConfig) -> Dict[str, str]:
    """Bin records into per-(entity, day) sequences; labels come from the manifest when given."""
    source = config.records_path or config.input_path
    if not source:
        raise ConfigError("'featurize' requires RECORDS_PATH or INPUT_PATH: pass --records <path> or --input <path>")
    require_paths(config, "featurize", "records_path" if config.records_path else "input_path")
    manifest = None
    if config.manifest_path:
        require_paths(config, "featurize", "manifest_path")
        manifest = load_manifest(config.manifest_path)
    else:
        print("⚠️ No manifest given: sequences will be unlabeled")

    parsed = parse_file(source, "auto" if config.records_path else config.input_format)
    binning = BinningConfig(timesteps=config.timesteps, timezone=config.timezone)
    result = bin_to_days(parsed.records, manifest, binning)
    if not result.sequences:
        raise DataError(f"no day sequences could be built from {source}")

    sequences_path = write_sequences(config.out("sequences.jsonl"), result.sequences)
    labeled = sum(1 for s in result.sequences if s.label is not None)
    write_sidecar(
        sequences_path,
        config.provenance(),
        sequences=len(result.sequences),
        labeled=labeled,
        skipped_records=result.skipped + parsed.skipped,
        timesteps=config.timesteps,
    )
    volume_path = write_csv(config.out("daily_volume.csv"), daily_volume(parsed.records, binning), config.provenance())

    if result.skipped:
        print(f"⚠️ Dropped {result.skipped} record(s) with unusable timestamps")
    print(f"✅ Built {len(result.sequences)} day sequence(s) ({labeled} labeled) at T={config.timesteps} -> {sequences_path}")
    return {"sequences": sequences_path, "daily_volume": volume_path}


# ----------------------
# fit-codec
# ----------------------
@command("fit-codec")
def run_fit_codec(config: PipelineConfig) -> Dict[str, str]:
    sequences = _sequences(config, "fit-codec")
    codec = fit(sequences)
    codec_path = save_codec(codec, config.out("codec.json"), config.provenance())
    print(f"✅ Fitted codec on {len(sequences)} sequence(s) -> {codec_path}")
    return {"codec": codec_path}


# ----------------------
# train
# ----------------------
@command("train")
def run_train(config: PipelineConfig) -> Dict[str, str]:
    """Stratified cross-validation report, then the final model on all labeled days."""
    require_paths(config, "train", "codec_path")
    codec = load_codec(config.codec_path)
    labeled = _labeled(_sequences(config, "train"), "train")
    X = transform_many(labeled, codec)
    y = np.array([s.label for s in labeled], dtype=np.int64)

    architecture = PhaseModelConfig.from_pipeline(config, codec.timesteps, len(FEATURES), config.seed)
    settings = TrainSettings.from_pipeline(config)
    devices = len({s.entity for s in labeled})
    print(f"✅ Training on {len(y)} labeled day(s) ({int(y.sum())} human) from {devices} device(s), {config.folds}-fold")
    groups = [s.entity for s in labeled] if config.group_folds else None
    report = cross_validate(
        X, y, architecture, settings, k=config.folds, seed=config.seed, workers=config.workers, groups=groups
    )
    model, final_history = train_final(X, y, architecture, settings, seed=config.seed)

    payload = report.model_dump(mode="json")
    payload["final"] = final_history.model_dump(mode="json")
    report_path = write_json(config.out("train_report.json"), payload, config.provenance())
    history_path = write_csv(config.out("loss_history.csv"), report.loss_history(), config.provenance())
    model_path = save_model(model, config.out("model.phase"), config.provenance())

    summary = report.summary
    print(f"✅ Cross-validation accuracy {summary['accuracy'].formatted}, "
          f"balanced accuracy {summary['balanced_accuracy'].formatted}")
    print(f"✅ Final model ({final_history.epochs_run} epochs) -> {model_path}")
    return {"report": report_path, "loss_history": history_path, "model": model_path}


# ----------------------
# score
# ----------------------
@command("score")
def run_score(config: PipelineConfig) -> Dict[str, str]:
    model, codec, sequences = _model_inputs(config, "score")
    scores = score_days(model, codec, sequences, config.band_thresholds)
    scores_path = write_csv(config.out("scores.csv"), scores_frame(scores), config.provenance())
    summaries = summarize_all(scores)
    summaries_path = write_json(
        config.out("entity_summaries.json"),
        {"entities": [s.model_dump(mode="json") for s in summaries], "band_histogram": band_histogram(scores)},
        config.provenance(),
    )
    print(f"✅ Scored {len(scores)} entity-day(s) over {len(summaries)} entities -> {scores_path}")
    return {"scores": scores_path, "summaries": summaries_path}


# ----------------------
# evaluate
# ----------------------
@command("evaluate")
def run_evaluate(config: PipelineConfig) -> Dict[str, str]:
    """Apply a trained model to a labeled archive and report the metric suite."""
    model, codec, sequences = _model_inputs(config, "evaluate")
    labeled = _labeled(sequences, "evaluate")
    y = np.array([s.label for s in labeled], dtype=np.int64)
    probabilities = predict_proba(model, transform_many(labeled, codec))
    metrics = evaluate(y, probabilities, config.decision_threshold)
    path = write_json(
        config.out("evaluation.json"),
        {"metrics": metrics, "sequences": len(labeled), "threshold": config.decision_threshold},
        config.provenance(),
    )
    print(f"✅ Evaluated {len(labeled)} labeled day(s): accuracy {metrics['accuracy']:.3f} -> {path}")
    return {"evaluation": path}


# ----------------------
# explain
# ----------------------
@command("explain")
def run_explain(config: PipelineConfig) -> Dict[str, str]:
    """Per-timestep Shapley attributions for the first EXPLAIN_MAX_DAYS days in (entity, date) order."""
    model, codec, sequences = _model_inputs(config, "explain")
    days = sorted(sequences, key=lambda s: (s.entity, s.date))[: config.explain_max_days]
    X = transform_many(days, codec)
    if config.explain_background == "mean":
        background = mean_background(transform_many(sequences, codec))
    else:
        background = missing_background(codec)

    background_id = f"{config.explain_background}:{array_digest(background)}"
    predict = model_predictor(model)
    seeds = derive_seeds(config.seed, len(days))
    attributions = []
    explained = []
    top_frames = []
    scatter_frames = []
    for seq, x, seed in zip(days, X, seeds):
        result = explain_day(
            predict, x, background, config.explain_method, config.explain_samples, seed,
            instance_id=f"{seq.entity}/{seq.date}", background_id=background_id,
        )
        attributions.append(result.values)
        explained.append({
            "instance": result.instance_id,
            "input_digest": array_digest(x),
            "method": result.method,
            "prediction": result.prediction,
        })
        top = top_feature_frame(result.values)
        top.insert(0, "date", seq.date)
        top.insert(0, "entity", seq.entity)
        top_frames.append(top)
        scatter = scatter_table(result.values, x, codec)
        scatter.insert(0, "date", seq.date)
        scatter.insert(0, "entity", seq.entity)
        scatter_frames.append(scatter)
        logger.info(f"[SHAP] explained one day ({result.method}), prediction {result.prediction:.4f}")

    provenance = config.provenance()
    artifacts = {
        "top_features": write_csv(config.out("top_features.csv"), pd.concat(top_frames, ignore_index=True), provenance),
        "scatter": write_csv(config.out("scatter.csv"), pd.concat(scatter_frames, ignore_index=True), provenance),
        "explanations": write_json(
            config.out("explanations.json"), {"background": background_id, "days": explained}, provenance
        ),
    }
    heatmap = importance_heatmap(attributions)
    artifacts["heatmap"] = write_csv(config.out("heatmap.csv"), heatmap_frame(heatmap), provenance)

    steps = config.explain_timesteps if config.explain_timesteps else default_timesteps(codec.timesteps)
    for t in steps:
        table = beeswarm_table(attributions, list(X), int(t), codec)
        artifacts[f"beeswarm_{t}"] = write_csv(config.out(f"beeswarm_t{t}.csv"), table, provenance)

    if config.explain_svg:
        try:
            artifacts["heatmap_svg"] = render_heatmap_svg(heatmap, config.out("heatmap.svg"))
        except (ImportError, RuntimeError, OSError) as e:
            print(f"⚠️ Heatmap SVG skipped: {e}")

    print(f"✅ Explained {len(days)} day(s) at T={codec.timesteps} -> {config.output_dir}")
    return artifacts


# ----------------------
# report
# ----------------------
def _read_scores(path: str) -> List[PhaseScore]:
    frame = read_csv(path, dtype={"entity": str, "date": str, "band": str})
    missing = {"entity", "date", "raw", "reported", "band"} - set(frame.columns)
    if missing:
        raise DataError(f"scores file {path} lacks column(s): {', '.join(sorted(missing))}")
    try:
        return [
            PhaseScore(entity=row.entity, date=row.date, raw=float(row.raw), reported=float(row.reported), band=Band(row.band))
            for row in frame.itertuples(index=False)
        ]
    except ValueError as e:
        raise DataError(f"scores file {path} is invalid: {e}") from e


@command("report")
def run_report(config: PipelineConfig) -> Dict[str, str]:
    """One JSON bundling cross-validation metrics, day scores, entity summaries and the band histogram."""
    require_paths(config, "report", "report_path", "scores_path")
    train_report = read_json(config.report_path)
    if "summary" not in train_report:
        raise DataError(f"{config.report_path} is not a training report")
    scores = _read_scores(config.scores_path)
    bundle = {
        "metrics": train_report["summary"],
        "folds": train_report.get("k"),
        "training_provenance": train_report.get("provenance"),
        "scores": [s.model_dump(mode="json") for s in scores],
        "entities": [s.model_dump(mode="json") for s in summarize_all(scores)] if scores else [],
        "band_histogram": band_histogram(scores),
    }
    path = write_json(config.out("report.json"), bundle, config.provenance())
    print(f"✅ Report with {len(scores)} score(s) -> {path}")
    return {"report": path}


def run(command_name: str, config: PipelineConfig) -> Dict[str, str]:
    handler: Optional[Handler] = COMMANDS.get(command_name)
    if handler is None:
        raise ConfigError(f"Unknown command {command_name!r}; expected one of {', '.join(COMMANDS)}")
    logger.info(f"[PIPELINE] {command_name} (config {config.config_hash()[:12]}, seed {config.seed})")
    return handler(config)
