"""Command-line workflow: pretrain, discover, edit, evaluate, report, serve.

Artifacts live under a root directory (``--root`` or ``NOISEDIRS_ROOT``):
``config.yaml``, ``model.bin``, ``bank.bin``, plus ``edits/``, ``reports/``
and ``manifests/`` written by the subcommands.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import report as report_mod
from .bank import load_bank, save_bank
from .config import ExperimentConfig, config_hash, load_config, serialize_config
from .data import (
    Factor,
    FactorSpec,
    gen_synthetic_factors,
    load_image_folder,
    load_latent_png,
    sample_dataset_from_model,
    save_latent_png,
)
from .denoiser import TrainConfig, load_model, save_model, train_denoiser
from .editing import COARSE_WINDOW, FINE_WINDOW, EditSet, EditSpec, edit_real, sample_edited
from .errors import ConfigError, ContractViolation, FormatError, IngestionError
from .evaluation import (
    diversity_report,
    generated_pipeline,
    rescore,
    train_factor_probe,
)
from .manifest import RunManifest, write_manifest
from .schedule import LatentState, make_schedule

EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_FORMAT = 4
EXIT_FAILURE = 1


class Workspace:
    """Artifact root plus lazy access to config, model, bank, and dataset."""

    def __init__(self, root: Path, config_path: Path | None = None):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        stored = self.root / "config.yaml"
        if config_path is not None:
            self.config = load_config(config_path)
            stored.write_text(serialize_config(self.config))
        elif stored.exists():
            self.config = load_config(stored)
        else:
            self.config = ExperimentConfig()
            self.config.validate()
            stored.write_text(serialize_config(self.config))
        self.config_hash = config_hash(self.config)

    @property
    def model_path(self) -> Path:
        return self.root / "model.bin"

    @property
    def bank_path(self) -> Path:
        return self.root / "bank.bin"

    def require(self, path: Path, hint: str):
        if not path.exists():
            raise click.ClickException(f"missing artifact {path} (run `noisedirs {hint}` first)")

    def load_model(self):
        self.require(self.model_path, "train-denoiser")
        return load_model(self.model_path)

    def load_bank(self):
        self.require(self.bank_path, "discover")
        return load_bank(self.bank_path)

    def schedule(self):
        sc = self.config.schedule
        return make_schedule(sc.T, sc.beta_start, sc.beta_end, sc.kind, sc.deterministic)

    def dataset(self, with_labels: bool = False):
        cfg = self.config
        src = cfg.dataset.source
        if src == "synthetic":
            syn = cfg.dataset.synthetic
            spec = FactorSpec(
                factors=[
                    Factor(n, lo, hi, r)
                    for n, lo, hi, r in zip(
                        syn.factor_names, syn.factor_lows, syn.factor_highs, syn.factor_renders
                    )
                ],
                count=syn.count,
                seed=cfg.seed,
                latent_shape=cfg.latent_shape,
            )
            images, labels = gen_synthetic_factors(spec)
            return (images, labels) if with_labels else (images, None)
        if src == "folder":
            if not cfg.dataset.path:
                raise ConfigError("dataset.path", "folder source requires a path")
            images = load_image_folder(cfg.dataset.path, cfg.latent_shape, cfg.trainer.N, cfg.seed)
            return images, None
        if src == "model_samples":
            model = self.load_model()
            images = sample_dataset_from_model(
                model, self.schedule(), cfg.trainer.N, cfg.seed, cfg.edit.eval_steps
            )
            return images, None
        raise ConfigError("dataset.source", f"unknown source {src!r}")

    def probe(self):
        if self.config.dataset.source != "synthetic":
            raise click.ClickException("probe-based evaluation needs the synthetic dataset source")
        images, labels = self.dataset(with_labels=True)
        return train_factor_probe(
            images,
            labels.binary,
            labels.names,
            seed=self.config.eval.eval_seed,
            hidden=self.config.eval.probe_hidden,
            steps=self.config.eval.probe_steps,
        )

    def manifest(self, command: str) -> RunManifest:
        m = RunManifest(config_hash=self.config_hash, command=command)
        m.seeds = {"global": self.config.seed}
        return m

    def write_manifest(self, manifest: RunManifest):
        if not manifest.finalized:
            manifest.finalize()
        out = self.root / "manifests" / f"{manifest.command}-{int(manifest.started_at)}.json"
        write_manifest(manifest, out)
        write_manifest(manifest, self.root / "manifests" / f"{manifest.command}-latest.json")
        return out


def parse_window(text: str) -> tuple[float, float]:
    if text == "fine":
        return FINE_WINDOW
    if text == "coarse":
        return COARSE_WINDOW
    try:
        hi, lo = (float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"window must be 'fine', 'coarse' or 'hi,lo', got {text!r}")
    return (hi, lo)


def parse_edit_arg(text: str) -> EditSpec:
    """direction:scale[:hi,lo] or direction:scale:fine|coarse."""
    parts = text.split(":")
    if len(parts) < 2:
        raise click.BadParameter(f"edit must be 'direction:scale[:window]', got {text!r}")
    window = parse_window(parts[2]) if len(parts) > 2 else (1.0, 0.0)
    try:
        return EditSpec(int(parts[0]), float(parts[1]), window)
    except ValueError as exc:
        raise click.BadParameter(str(exc))


@click.group()
@click.option(
    "--root",
    type=click.Path(path_type=Path),
    envvar="NOISEDIRS_ROOT",
    default=Path("artifacts"),
    show_default=True,
    help="Artifact root directory (env NOISEDIRS_ROOT).",
)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.pass_context
def cli(ctx, root: Path, config_path):
    ctx.obj = Workspace(root, config_path)


@cli.command("train-denoiser")
@click.pass_obj
def cmd_train_denoiser(ws: Workspace):
    """Pretrain the noise predictor on the configured dataset."""
    manifest = ws.manifest("train-denoiser")
    images, labels = ws.dataset(with_labels=ws.config.denoiser.use_labels)
    dn = ws.config.denoiser
    class_labels = None
    if labels is not None and dn.use_labels:
        # joint class index over the binarized factors (probe conditions only)
        combo = np.zeros(labels.binary.shape[0], dtype=np.int64)
        for col in range(labels.binary.shape[1]):
            combo = combo * 2 + labels.binary[:, col]
        class_labels = torch.from_numpy(combo)
    result = train_denoiser(
        images,
        ws.schedule(),
        TrainConfig(steps=dn.steps, lr=dn.lr, batch_size=dn.batch_size, uncond_prob=dn.uncond_prob),
        seed=ws.config.seed,
        labels=class_labels,
        base_channels=dn.base_channels,
        cond_dim=dn.cond_dim,
        time_dim=dn.time_dim,
    )
    save_model(result.model, ws.model_path)
    manifest.loss_trace = result.loss_trace
    manifest.add_artifact("model", ws.model_path)
    out = ws.write_manifest(manifest)
    click.echo(
        f"trained denoiser: loss {result.initial_loss:.4f} -> {result.final_loss:.4f}; "
        f"model {ws.model_path}; manifest {out}"
    )


@cli.command("discover")
@click.pass_obj
def cmd_discover(ws: Workspace):
    """Learn the direction bank against the frozen denoiser."""
    from .trainer import discover as run_discover

    model = ws.load_model()
    images, _ = ws.dataset()
    checksum_before = model.param_checksum()
    bank, run_manifest = run_discover(
        model,
        images,
        ws.config.trainer,
        K=ws.config.K,
        init_scale=ws.config.init_scale,
        config_hash=ws.config_hash,
        checkpoint_dir=ws.root / "checkpoints",
    )
    save_bank(bank, ws.bank_path)
    manifest = ws.manifest("discover")
    manifest.loss_trace = run_manifest.loss_trace
    manifest.checkpoints = run_manifest.checkpoints
    manifest.add_artifact("bank", ws.bank_path)
    manifest.add_artifact("model", ws.model_path)
    out = ws.write_manifest(manifest)
    assert model.param_checksum() == checksum_before
    click.echo(f"discovered {bank.K} directions in {run_manifest.wall_clock_s:.0f}s; bank {ws.bank_path}; manifest {out}")


def _edit_output(
    ws: Workspace, state, sidecar: dict, out: Path | None, manifest: RunManifest
) -> Path:
    edits_dir = ws.root / "edits"
    edits_dir.mkdir(parents=True, exist_ok=True)
    stamp = hashlib.sha256(json.dumps(sidecar, sort_keys=True).encode()).hexdigest()[:12]
    png = out if out is not None else edits_dir / f"edit_{stamp}.png"
    png.parent.mkdir(parents=True, exist_ok=True)
    save_latent_png(state.x, png)
    sidecar["image_sha256"] = hashlib.sha256(png.read_bytes()).hexdigest()
    sidecar_path = png.with_suffix(".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    manifest.add_artifact("image", png)
    manifest.add_artifact("sidecar", sidecar_path)
    ws.write_manifest(manifest)
    return png


def _run_edit(ws: Workspace, seed, image, edits: list[EditSpec], out: Path | None, command: str):
    model = ws.load_model()
    bank = ws.load_bank()
    model.attach_bank(bank)
    schedule = ws.schedule()
    manifest = ws.manifest(command)
    sidecar = {
        "config_hash": ws.config_hash,
        "edits": [
            {"direction": e.direction, "scale": e.scale, "window": list(e.window)} for e in edits
        ],
        "eval_steps": ws.config.edit.eval_steps,
        "guidance_scale": ws.config.edit.guidance_scale,
        "schedule": model.schedule_params,
    }
    if image is not None:
        latent = load_latent_png(image, ws.config.latent_shape)
        state = edit_real(
            model, schedule, LatentState(latent, 0), EditSet(edits), ws.config.edit.invert_steps
        )
        sidecar["eval_steps"] = ws.config.edit.invert_steps
        sidecar["source_image"] = str(image)
    else:
        state = sample_edited(
            model,
            schedule,
            int(seed),
            guidance_scale=ws.config.edit.guidance_scale,
            edit_set=EditSet(edits),
            eval_steps=ws.config.edit.eval_steps,
        )
        sidecar["seed"] = int(seed)
    png = _edit_output(ws, state, sidecar, out, manifest)
    click.echo(f"wrote {png} (+ sidecar)")
    return png


@cli.command("edit")
@click.option("--direction", type=int, default=None, help="Direction index (omit for plain sampling).")
@click.option("--scale", type=float, default=0.0)
@click.option("--window", default="1.0,0.0", help="'fine', 'coarse', or 'hi,lo' fractions of T.")
@click.option("--seed", type=int, default=0)
@click.option("--image", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--sidecar", type=click.Path(exists=True, path_type=Path), default=None,
              help="Replay a previous edit's sidecar record byte-for-byte.")
@click.pass_obj
def cmd_edit(ws: Workspace, direction, scale, window, seed, image, out, sidecar):
    """Apply one direction (or none) to a generated or real image."""
    if sidecar is not None:
        record = json.loads(Path(sidecar).read_text())
        edits = [
            EditSpec(e["direction"], e["scale"], tuple(e["window"])) for e in record["edits"]
        ]
        src_image = record.get("source_image")
        _run_edit(ws, record.get("seed", 0), src_image, edits, out, "edit")
        return
    edits = []
    if direction is not None:
        edits.append(EditSpec(direction, scale, parse_window(window)))
    _run_edit(ws, seed, image, edits, out, "edit")


@cli.command("compose")
@click.option("--edit", "edit_args", multiple=True, required=True,
              help="direction:scale[:window], repeatable.")
@click.option("--seed", type=int, default=0)
@click.option("--image", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.pass_obj
def cmd_compose(ws: Workspace, edit_args, seed, image, out):
    """Apply several directions simultaneously."""
    edits = [parse_edit_arg(a) for a in edit_args]
    _run_edit(ws, seed, image, edits, out, "compose")


@cli.command("invert-edit")
@click.option("--image", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--edit", "edit_args", multiple=True, required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.pass_obj
def cmd_invert_edit(ws: Workspace, image, edit_args, out):
    """Edit a real image via deterministic inversion."""
    edits = [parse_edit_arg(a) for a in edit_args]
    _run_edit(ws, 0, image, edits, out, "invert-edit")


@cli.command("rescore")
@click.option("--scale", type=float, default=None, help="Edit scale (default from config).")
@click.option("--window", default="1.0,0.0")
@click.option("--directions", default=None, help="Comma-separated indices (default: all).")
@click.option("--signed/--unsigned", default=True, help="Include negative-scale rows.")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.pass_obj
def cmd_rescore(ws: Workspace, scale, window, directions, signed, out):
    """Score probability changes per direction against the factor probe."""
    model = ws.load_model()
    bank = ws.load_bank()
    model.attach_bank(bank)
    probe = ws.probe()
    scale = scale if scale is not None else ws.config.edit.default_scale
    win = parse_window(window)
    idx = (
        [int(v) for v in directions.split(",")] if directions else list(range(bank.K))
    )
    edits = []
    for k in idx:
        edits.append(EditSpec(k, scale, win))
        if signed:
            edits.append(EditSpec(k, -scale, win))
    seeds = [ws.config.eval.eval_seed * 100_000 + i for i in range(ws.config.eval.eval_size)]
    pipeline = generated_pipeline(
        model, ws.schedule(), ws.config.edit.guidance_scale, ws.config.edit.eval_steps
    )
    matrix = rescore(
        edits,
        seeds,
        probe,
        pipeline,
        metadata={
            "config_hash": ws.config_hash,
            "eval_seeds": f"{seeds[0]}..{seeds[-1]}",
            "scale": scale,
            "window": f"{win[0]},{win[1]}",
        },
    )
    reports = ws.root / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    path = out if out is not None else reports / "rescore.csv"
    matrix.save(path)
    manifest = ws.manifest("rescore")
    manifest.add_table("rescore", path)
    manifest.add_artifact("rescore", path)
    ws.write_manifest(manifest)
    click.echo(f"wrote {path} ({matrix.values.shape[0]}x{matrix.values.shape[1]})")


@cli.command("report")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Report directory.")
@click.option("--strip-directions", default=None, help="Comma-separated indices (default: first 4).")
@click.pass_obj
def cmd_report(ws: Workspace, out, strip_directions):
    """Render figures and delimited outputs for the current artifacts."""
    model = ws.load_model()
    bank = ws.load_bank()
    model.attach_bank(bank)
    schedule = ws.schedule()
    out_dir = out if out is not None else ws.root / "reports"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ws.manifest("report")

    latest = ws.root / "manifests" / "discover-latest.json"
    if latest.exists():
        trace = json.loads(latest.read_text())["loss_trace"]
        if trace:
            fig = report_mod.loss_curve_figure(trace, out_dir / "loss_curve.png")
            manifest.add_figure("loss_curve", fig)

    images, _ = ws.dataset()
    div = diversity_report(
        bank, model, images[: min(16, images.shape[0])],
        threshold=ws.config.eval.duplicate_threshold, seed=ws.config.eval.eval_seed,
    )
    fig = report_mod.diversity_heatmap(div, out_dir / "diversity.png")
    manifest.add_figure("diversity", fig)
    (out_dir / "diversity.json").write_text(json.dumps(div.to_dict(), indent=2))
    manifest.add_table("diversity", out_dir / "diversity.json")

    idx = (
        [int(v) for v in strip_directions.split(",")]
        if strip_directions
        else list(range(min(4, bank.K)))
    )
    from .editing import interpolation_strip

    scales = list(ws.config.edit.strip_scales)
    for k in idx:
        strip = interpolation_strip(
            model, schedule, ws.config.eval.eval_seed, k, scales,
            window=ws.config.edit.fine_window, guidance_scale=ws.config.edit.guidance_scale,
            eval_steps=ws.config.edit.eval_steps,
        )
        fig = report_mod.strip_figure(
            [s.x for s in strip], scales, out_dir / f"strip_d{k}.png", title=f"direction {k}"
        )
        manifest.add_figure(f"strip_d{k}", fig)

    if ws.config.dataset.source == "synthetic":
        probe = ws.probe()
        seeds = [ws.config.eval.eval_seed * 100_000 + i for i in range(min(16, ws.config.eval.eval_size))]
        pipeline = generated_pipeline(model, schedule, ws.config.edit.guidance_scale, ws.config.edit.eval_steps)
        edits = [EditSpec(k, ws.config.edit.default_scale, (1.0, 0.0)) for k in idx]
        matrix = rescore(edits, seeds, probe, pipeline, metadata={"config_hash": ws.config_hash})
        matrix.save(out_dir / "rescore_preview.csv")
        manifest.add_table("rescore_preview", out_dir / "rescore_preview.csv")
        fig = report_mod.rescore_heatmap(matrix, out_dir / "rescore_preview.png")
        manifest.add_figure("rescore_preview", fig)

    ws.write_manifest(manifest)
    click.echo(f"report written to {out_dir}")


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.pass_obj
def cmd_serve(ws: Workspace, host, port):
    """Run the HTTP service over the current artifacts."""
    import uvicorn

    from .service import build_app

    app = build_app(ws.root)
    uvicorn.run(app, host=host, port=port, log_level="info")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        code = EXIT_MISSING_ARTIFACT if "missing artifact" in str(exc) else EXIT_CONFIG
        sys.exit(code)
    except click.Abort:
        sys.exit(130)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except FormatError as exc:
        click.echo(f"format error: {exc}", err=True)
        sys.exit(EXIT_FORMAT)
    except (IngestionError, ContractViolation) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)


if __name__ == "__main__":
    main()
