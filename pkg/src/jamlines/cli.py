"""Command-line entry points for training, generation, serving, and eval."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .aligner import LatentAligner
from .audio import SpectrogramParams, decode_wav, encode_wav, to_mel_spectrogram
from .corpus import load_manifest, make_synthetic_corpus, split_by_clip
from .evaluate import check_thresholds, evaluate_bundle
from .ranking import QualityClassifier, load_labeled_lines
from .service import (
    MODES,
    LyricService,
    ModelBundle,
    ServerConfig,
    build_app,
    generate_for_clip,
)
from .specvae import SpecVae, write_history_csv
from .textcvae import TextCvae


def _read_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _spectrogram_params(cfg: dict) -> SpectrogramParams:
    return SpectrogramParams(**cfg.get("spectrogram", {}))


@click.group()
def main():
    """Lyric-line generation conditioned on live instrument audio."""


@main.command("synth-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--clusters", default=2, show_default=True)
@click.option("--pairs-per-cluster", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--sample-rate", default=22050, show_default=True)
@click.option("--window-seconds", default=10.0, show_default=True)
def synth_corpus(out_dir, clusters, pairs_per_cluster, seed, sample_rate, window_seconds):
    """Write a synthetic paired corpus: WAV files, manifest.tsv, clusters.json."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    corpus = make_synthetic_corpus(
        n_clusters=clusters,
        pairs_per_cluster=pairs_per_cluster,
        seed=seed,
        sample_rate=sample_rate,
        window_seconds=window_seconds,
        keep_audio=True,
    )
    manifest_rows = []
    cluster_of = {}
    for ex in corpus.examples:
        rel = f"wav/{ex.clip_id}.wav"
        wav_path = out / rel
        if not wav_path.exists():
            wav_path.write_bytes(encode_wav(corpus.clips[ex.clip_id]))
        manifest_rows.append(f"{rel}\t{ex.line.source_text}")
        cluster_of[rel] = corpus.cluster_of[ex.clip_id]
    (out / "manifest.tsv").write_text("\n".join(manifest_rows) + "\n", encoding="utf-8")
    (out / "clusters.json").write_text(
        json.dumps({"pools": corpus.pools, "cluster_of": cluster_of}, indent=2)
    )
    click.echo(f"wrote {len(corpus.examples)} pairs to {out}")


@main.command("train-spec-vae")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--models", "models_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_spec_vae(manifest, models_dir, config_path):
    """Stage one: fit the spectrogram VAE and checkpoint it."""
    cfg = _read_config(config_path)
    params = _spectrogram_params(cfg)
    corpus = load_manifest(manifest, params=params)
    model = SpecVae(input_shape=params.shape, **cfg.get("spec_vae", {}))
    model.fit([ex.spectrogram for ex in corpus.examples])
    out = Path(models_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "spec_vae")
    (out / "spectrogram.json").write_text(json.dumps(params.to_dict()))
    write_history_csv(out / "spec_vae_history.csv", model.history_)
    click.echo(f"spec-vae trained on {len(corpus)} pairs, final "
               f"total={model.history_[-1]['total']:.5f}")


@main.command("train-text-cvae")
@click.option("--prior", type=click.Choice(["standard", "spec"]), default="standard",
              show_default=True)
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--models", "models_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_text_cvae(prior, manifest, models_dir, config_path):
    """Stage two: fit the lyric-line CVAE under the chosen prior."""
    cfg = _read_config(config_path)
    out = Path(models_dir)
    spec_model = SpecVae.load(out / "spec_vae")
    params = SpectrogramParams(**json.loads((out / "spectrogram.json").read_text()))
    corpus = load_manifest(manifest, params=params)
    prior_mode = "spec_posterior" if prior == "spec" else "standard"
    model = TextCvae(
        prior_mode=prior_mode,
        latent_dim=spec_model.latent_dim,
        **cfg.get("text_cvae", {}),
    )
    model.fit(corpus.examples, spec_model, corpus.vocab)
    key = "topology" if prior == "spec" else "baseline"
    model.save(out / f"text_{key}")
    write_history_csv(out / f"text_{key}_history.csv", model.history_)
    click.echo(f"text-cvae ({prior_mode}) trained on {len(corpus)} pairs, final "
               f"total={model.history_[-1]['total']:.5f}")


@main.command("train-gan")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--models", "models_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_gan(manifest, models_dir, config_path):
    """Stage three: fit the adversarial audio-to-text latent map."""
    cfg = _read_config(config_path)
    out = Path(models_dir)
    spec_model = SpecVae.load(out / "spec_vae")
    text_model = TextCvae.load(out / "text_baseline")
    params = SpectrogramParams(**json.loads((out / "spectrogram.json").read_text()))
    corpus = load_manifest(manifest, params=params, vocab=text_model.vocab_)
    model = LatentAligner(latent_dim=spec_model.latent_dim, **cfg.get("gan", {}))
    model.fit(corpus.examples, spec_model, text_model)
    model.save(out / "aligner")
    write_history_csv(out / "aligner_history.csv", model.history_)
    click.echo(f"aligner trained on {len(corpus)} pairs, final "
               f"mse={model.history_[-1]['mse']:.5f}")


@main.command("train-classifier")
@click.option("--labels", required=True, type=click.Path(exists=True),
              help='Training file, one "label<TAB>text" per line.')
@click.option("--models", "models_dir", required=True, type=click.Path())
def train_classifier(labels, models_dir):
    """Optional: fit the binary quality classifier used for ranking."""
    texts, y = load_labeled_lines(labels)
    clf = QualityClassifier().fit(texts, y)
    clf.save(Path(models_dir) / "classifier")
    acc = float((clf.predict(texts) == y).mean())
    click.echo(f"classifier trained on {len(texts)} lines, train accuracy {acc:.3f}")


@main.command("generate")
@click.option("--wav", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(list(MODES)), default="baseline",
              show_default=True)
@click.option("--n", default=100, show_default=True)
@click.option("--k", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--models", "models_dir", required=True, type=click.Path(exists=True))
@click.option("--ranker", type=click.Choice(["likelihood", "classifier"]),
              default="likelihood", show_default=True)
def generate(wav, mode, n, k, seed, models_dir, ranker):
    """Generate ranked lines for one WAV clip; output is seed-deterministic."""
    bundle = ModelBundle.load(models_dir)
    clip = decode_wav(Path(wav).read_bytes())
    grid = to_mel_spectrogram(clip, bundle.params)
    result = generate_for_clip(
        bundle, grid, mode, n=n, k=k, seed=seed,
        clip_id=Path(wav).name, timestamp="", ranker=ranker,
    )
    click.echo(
        json.dumps(
            {
                "clip_id": result.clip_id,
                "mode": result.mode,
                "seed": seed,
                "lines": [
                    {"text": l.text, "score": l.score, "rank": l.rank}
                    for l in result.lines
                ],
            },
            ensure_ascii=False,
        )
    )


@main.command("serve")
@click.option("--port", default=None, type=int)
@click.option("--config", "config_path", type=click.Path(exists=True))
def serve(port, config_path):
    """Run the websocket service (endpoint /ws)."""
    import uvicorn

    server_cfg = ServerConfig.from_json(config_path) if config_path else ServerConfig()
    if port is not None:
        server_cfg.port = port
    bundle = ModelBundle.load(server_cfg.models_dir)
    app = build_app(LyricService(bundle, server_cfg))
    uvicorn.run(app, host="0.0.0.0", port=server_cfg.port)


@main.command("eval")
@click.option("--models", "models_dir", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True),
              help="Directory written by synth-corpus.")
@click.option("--n", default=12, show_default=True)
@click.option("--k", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--val-fraction", default=0.1, show_default=True)
@click.option("--out", "out_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def eval_cmd(models_dir, corpus_dir, n, k, seed, val_fraction, out_path, config_path):
    """Proxy metrics on held-out synthetic clips; nonzero exit on misses."""
    from .corpus import SyntheticCorpus

    cfg = _read_config(config_path)
    bundle = ModelBundle.load(models_dir)
    corpus_dir = Path(corpus_dir)
    loaded = load_manifest(corpus_dir / "manifest.tsv", params=bundle.params)
    clusters = json.loads((corpus_dir / "clusters.json").read_text())
    synth = SyntheticCorpus(
        examples=loaded.examples,
        vocab=loaded.vocab,
        pools=clusters["pools"],
        cluster_of=clusters["cluster_of"],
    )
    _, heldout = split_by_clip(synth.examples, val_fraction=val_fraction, seed=seed)
    report = evaluate_bundle(bundle, synth, heldout, n=n, k=k, seed=seed)
    click.echo(report.to_table())
    if out_path:
        Path(out_path).write_text(report.to_json())
    failures = check_thresholds(report, cfg.get("eval", {}))
    for failure in failures:
        click.echo(f"THRESHOLD MISSED: {failure}", err=True)
    if failures:
        sys.exit(1)


if __name__ == "__main__":
    main()
