"""Automated proxy metrics replacing human studies: alignment error,
cluster purity on the synthetic corpus, and diversity measures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import SyntheticCorpus, tokenize
from .service import MODES, ModelBundle, derive_clip_seed, generate_for_clip


def distinct_n(lines, n: int) -> float:
    """Unique n-grams over total n-grams across a generated set of lines.

    Lines may be strings or LyricLine; counting is over word tokens.
    """
    total = 0
    seen = set()
    for line in lines:
        toks = tokenize(line if isinstance(line, str) else line.source_text)
        grams = [tuple(toks[i : i + n]) for i in range(len(toks) - n + 1)]
        total += len(grams)
        seen.update(grams)
    return len(seen) / total if total else 0.0


def mean_line_len(lines) -> float:
    lens = [
        len(tokenize(line if isinstance(line, str) else line.source_text))
        for line in lines
    ]
    return float(np.mean(lens)) if lens else 0.0


def alignment_mse(aligner, spec_model, text_model, pairs) -> float:
    """Held-out mean squared alignment error at temperature 0.

    Both sides use posterior means, so the number reflects the quality of
    the learned map rather than sampling noise.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty held-out set")
    spec_means, _ = spec_model.encode_batch([ex.spectrogram for ex in pairs])
    predicted = aligner.predict(spec_means)
    targets = np.stack(
        [
            text_model.encode(ex.line, spec_means[i]).mean
            for i, ex in enumerate(pairs)
        ]
    )
    return float(((predicted - targets) ** 2).sum(axis=1).mean())


def _unique_clips(examples):
    seen = {}
    for ex in examples:
        seen.setdefault(ex.clip_id, ex.spectrogram)
    return list(seen.items())


def token_purity(lines, pool: set[str]) -> float:
    """Fraction of generated tokens that belong to the given vocabulary pool."""
    tokens = []
    for line in lines:
        tokens.extend(tokenize(line if isinstance(line, str) else line.source_text))
    if not tokens:
        return 0.0
    return sum(t in pool for t in tokens) / len(tokens)


def purity_report(
    bundle: ModelBundle,
    corpus: SyntheticCorpus,
    examples,
    mode: str,
    n: int = 12,
    k: int = 2,
    seed: int = 0,
) -> float:
    """Mean per-clip token purity of ranked generations for one mode."""
    purities = []
    for index, (clip_id, grid) in enumerate(_unique_clips(examples)):
        result = generate_for_clip(
            bundle,
            grid,
            mode,
            n=n,
            k=k,
            seed=derive_clip_seed(seed, index),
            clip_id=clip_id,
        )
        purities.append(
            token_purity([l.text for l in result.lines], corpus.pool_of_clip(clip_id))
        )
    return float(np.mean(purities))


def compare_modes(bundle: ModelBundle, clips, k: int = 1, seed: int = 0) -> list[dict]:
    """Top line per mode for each clip; a side-by-side inspection table.

    clips is a sequence of (clip_id, spectrogram).  Modes whose checkpoints
    are missing get the marker "(unavailable)".
    """
    rows = []
    for index, (clip_id, grid) in enumerate(clips):
        row = {"clip_id": clip_id}
        for mode in MODES:
            try:
                result = generate_for_clip(
                    bundle,
                    grid,
                    mode,
                    n=max(8, 4 * k),
                    k=k,
                    seed=derive_clip_seed(seed, index),
                    clip_id=clip_id,
                )
                row[mode] = result.lines[0].text
            except Exception:
                row[mode] = "(unavailable)"
        rows.append(row)
    return rows


@dataclass
class EvalReport:
    per_mode: dict[str, dict] = field(default_factory=dict)
    corpus: str = ""
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"corpus": self.corpus, "seed": self.seed, "per_mode": self.per_mode},
            indent=2,
            ensure_ascii=False,
        )

    def to_table(self) -> str:
        cols = ["mode", "latent_mse", "cluster_purity", "distinct_1", "distinct_2", "mean_line_len"]
        rows = [cols]
        for mode, metrics in self.per_mode.items():
            rows.append(
                [mode]
                + [
                    "-" if metrics.get(c) is None else f"{metrics[c]:.4f}"
                    for c in cols[1:]
                ]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
        return "\n".join(
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows
        )


def evaluate_bundle(
    bundle: ModelBundle,
    corpus: SyntheticCorpus,
    heldout,
    n: int = 12,
    k: int = 2,
    seed: int = 0,
    modes=None,
) -> EvalReport:
    """Purity, diversity, and alignment metrics per available mode."""
    report = EvalReport(corpus=f"synthetic:{len(corpus.pools)}-cluster", seed=seed)
    clips = _unique_clips(heldout)
    for mode in modes or MODES:
        try:
            bundle.text_model_for(mode)
            if mode == "gan" and bundle.aligner is None:
                continue
        except Exception:
            continue
        generated = []
        for index, (clip_id, grid) in enumerate(clips):
            result = generate_for_clip(
                bundle, grid, mode, n=n, k=k,
                seed=derive_clip_seed(seed, index), clip_id=clip_id,
            )
            generated.extend(l.text for l in result.lines)
        metrics = {
            "latent_mse": None,
            "cluster_purity": purity_report(bundle, corpus, heldout, mode, n=n, k=k, seed=seed),
            "distinct_1": distinct_n(generated, 1),
            "distinct_2": distinct_n(generated, 2),
            "mean_line_len": mean_line_len(generated),
        }
        if mode == "gan":
            metrics["latent_mse"] = alignment_mse(
                bundle.aligner, bundle.spec_vae, bundle.text_model_for("gan"), heldout
            )
        report.per_mode[mode] = metrics
    return report


def check_thresholds(report: EvalReport, thresholds: dict) -> list[str]:
    """Human-readable failures for every missed threshold; empty when green."""
    failures = []
    topo = report.per_mode.get("topology", {}).get("cluster_purity")
    base = report.per_mode.get("baseline", {}).get("cluster_purity")
    if "min_topology_purity" in thresholds:
        want = thresholds["min_topology_purity"]
        if topo is None or topo < want:
            failures.append(f"topology purity {topo} < {want}")
    if "min_purity_gap" in thresholds:
        want = thresholds["min_purity_gap"]
        if topo is None or base is None or topo - base < want:
            failures.append(f"purity gap {topo} - {base} < {want}")
    if "max_gan_latent_mse" in thresholds:
        want = thresholds["max_gan_latent_mse"]
        got = report.per_mode.get("gan", {}).get("latent_mse")
        if got is None or got > want:
            failures.append(f"gan latent mse {got} > {want}")
    return failures
