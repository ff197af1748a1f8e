"""Command-line interface: label, calibrate, evaluate, simulate.

Every option can also be set through an environment variable with the
WEAKLABEL prefix, e.g. WEAKLABEL_LABEL_WORKERS=8 for `label --workers`.
Exit codes: 0 success, 1 usage or config error, 2 partial failure (some
audios were skipped).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import calibration, evaluation, orchestrator
from .datamodel import config_to_dict, load_config
from .errors import ConfigError, UsageError, ValidationError
from .generators import (
    CorruptionModel,
    build_generators,
    load_generator_specs,
    write_replay_table,
)
from .selection import load_lm
from .textmetrics import UnitKind


class PartialFailure(RuntimeError):
    """Some audios were skipped; outputs for the rest were still written."""


@click.group(context_settings={"auto_envvar_prefix": "WEAKLABEL"})
def cli():
    """Weak-supervision labeling pipeline for speech corpora."""
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s %(message)s"
    )


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--generators", "generators_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--lm", "lm_path", default=None, type=click.Path(exists=True))
@click.option("--workers", default=1, show_default=True)
def label(corpus_path, config_path, generators_path, out_dir, lm_path, workers):
    """Run one labeling iteration; outputs land in OUT/iter_NNN."""
    corpus = orchestrator.load_corpus(corpus_path)
    config = load_config(config_path)
    specs = load_generator_specs(generators_path)
    generators = build_generators(specs, base_dir=Path(generators_path).parent)
    lm = load_lm(lm_path) if lm_path else None
    iter_dir, output = orchestrator.run_iteration(
        corpus, generators, config, out_dir, lm=lm, workers=workers
    )
    click.echo(json.dumps(output.summary.to_dict(), ensure_ascii=False, indent=2))
    click.echo(f"outputs written to {iter_dir}", err=True)
    if output.summary.audios_failed:
        raise PartialFailure(f"{output.summary.audios_failed} audio(s) skipped")


@cli.command()
@click.option("--space", "space_path", required=True, type=click.Path(exists=True))
@click.option("--samples", "samples_path", required=True, type=click.Path(exists=True))
@click.option("--out", "trace_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--lm", "lm_path", default=None, type=click.Path(exists=True))
def calibrate(space_path, samples_path, trace_path, config_path, lm_path):
    """Search the hyperparameter space; prints the best config as JSON."""
    space = calibration.load_search_space(space_path)
    samples = calibration.load_samples(samples_path)
    base = load_config(config_path) if config_path else None
    lm = load_lm(lm_path) if lm_path else None
    best, trace = calibration.calibrate(space, samples, base_config=base, lm=lm)
    calibration.write_trace(trace, trace_path)
    click.echo(json.dumps(config_to_dict(best), ensure_ascii=False, indent=2))
    click.echo(f"trace written to {trace_path} ({len(trace)} candidates)", err=True)


@cli.command()
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--baseline", "baseline_path", default=None, type=click.Path(exists=True))
@click.option("--out", "report_path", required=True, type=click.Path())
@click.option("--model-name", default="ours", show_default=True)
def evaluate(pairs_path, baseline_path, report_path, model_name):
    """Score (reference, prediction) pairs; optionally diff against a baseline report."""
    pairs = evaluation.load_eval_pairs(pairs_path)
    rates = evaluation.evaluate_pairs(pairs)
    report = evaluation.ModelReport.from_rates(model_name, rates)
    payload = {"report": report.to_dict()}
    click.echo(evaluation.format_report_table(report))
    if baseline_path:
        baseline = evaluation.load_report(baseline_path)
        table = evaluation.reduction_table(baseline, report)
        payload["reduction"] = table.to_dict()
        click.echo(evaluation.format_reduction_table(table))
    Path(report_path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    click.echo(f"report written to {report_path}", err=True)


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--workers", default=1, show_default=True)
def simulate(spec_path, config_path, out_dir, workers):
    """Label a synthetic corpus with noisy mock generators and grade the labels."""
    spec, corruption = _load_simulation_spec(spec_path)
    config = load_config(config_path)
    output, quality, corpus = orchestrator.simulate(
        spec, config, corruption, workers=workers
    )
    out = Path(out_dir)
    orchestrator.write_outputs(output, out)
    (out / "quality.json").write_text(
        json.dumps(quality.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    write_replay_table(corpus.ground_truth, out / "ground_truth.jsonl")
    click.echo(json.dumps(quality.to_dict(), ensure_ascii=False, indent=2))
    click.echo(f"outputs written to {out}", err=True)


def _load_simulation_spec(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    generators = data.pop("generators", None)
    if not isinstance(generators, list) or len(generators) < 2:
        raise ConfigError(f"{path}: 'generators' must list at least two mock generators")
    corruption = {}
    for item in generators:
        gid = item.get("generator_id")
        if not gid:
            raise ConfigError(f"{path}: each generator needs a generator_id")
        corruption[gid] = CorruptionModel(
            sub_rate=item.get("sub_rate", 0.0),
            ins_rate=item.get("ins_rate", 0.0),
            del_rate=item.get("del_rate", 0.0),
            unit_kind=UnitKind(item.get("unit_kind", "word")),
            seed=item.get("seed", 0),
        )
    known = {f.name for f in orchestrator.SimulationSpec.__dataclass_fields__.values()}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown simulation keys: {sorted(unknown)}")
    if "vocabulary" in data:
        data["vocabulary"] = tuple(data["vocabulary"])
    return orchestrator.SimulationSpec(**data), corruption


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except PartialFailure as exc:
        click.echo(f"partial failure: {exc}", err=True)
        return 2
    except (ConfigError, UsageError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
