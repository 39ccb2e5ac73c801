"""Word-level jobs: run the optimizer per letter, export artifacts, compose.

A run writes, per word: original.svg (the untouched word), one deformed
SVG + trace CSV + glyph JSONs per optimized letter, and manifest.json
listing every artifact together with the config hash for reproducibility.
Letters are independent jobs dispatched to a small thread pool; a failing
letter is recorded in the manifest without aborting the others.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import yaml

from . import engine, fonts, svgio
from .errors import EmptyWord, MissingArtifact, ServiceUnavailable, WordAsImageError
from .fonts import GlyphPath
from .guidance import GuidanceSpec


@dataclass(frozen=True)
class WordJob:
    word: str
    font: str  # font file path
    concept: str = ""  # defaults to the word itself
    letters: tuple[int, ...] | None = None  # indices to optimize; None = all
    out_dir: str = "out"
    config: engine.RunConfig = field(default_factory=engine.RunConfig)
    subdivision_targets: dict | None = None
    jobs: int = 0  # worker threads; 0 = min(len(letters), cpu_count)

    def __post_init__(self):
        if len(self.word) < 1:
            raise EmptyWord("word must have at least one letter")
        if self.letters is not None:
            bad = [i for i in self.letters if not 0 <= i < len(self.word)]
            if bad:
                raise ValueError(f"letter indices out of range: {bad}")


def config_to_dict(cfg: engine.RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: engine.RunConfig) -> str:
    doc = json.dumps(config_to_dict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(doc.encode()).hexdigest()


def config_from_dict(doc: dict) -> engine.RunConfig:
    doc = dict(doc or {})

    def sub(cls, key):
        raw = doc.pop(key, None)
        if raw is None:
            return cls()
        if key == "guidance" and isinstance(raw.get("t_range"), list):
            raw = dict(raw, t_range=tuple(raw["t_range"]))
        return cls(**raw)

    tone = sub(engine.ToneConfig, "tone")
    lr = sub(engine.LrSchedule, "lr")
    adam = sub(engine.AdamParams, "adam")
    augment = sub(engine.AugmentConfig, "augment")
    guidance = sub(GuidanceSpec, "guidance")
    return engine.RunConfig(
        tone=tone, lr=lr, adam=adam, augment=augment, guidance=guidance, **doc
    )


def load_config_file(path) -> engine.RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return config_from_dict(doc)


def prepare_letter(font_bytes: bytes, ch: str, targets: dict | None) -> GlyphPath:
    """Ingest one character and densify it to its control-point target."""
    outline = fonts.load_glyph(font_bytes, ch)
    path = fonts.to_cubics(outline)
    target = max(fonts.target_for(ch, targets), path.point_count)
    return fonts.subdivide_to_target(path, target)


def run_word(job: WordJob) -> dict:
    """Optimize the selected letters of a word; returns the manifest."""
    with open(job.font, "rb") as fh:
        font_bytes = fh.read()
    cfg = job.config
    if not cfg.guidance.concept:
        cfg = dataclasses.replace(
            cfg, guidance=dataclasses.replace(cfg.guidance, concept=job.concept or job.word)
        )
    os.makedirs(job.out_dir, exist_ok=True)
    indices = list(job.letters) if job.letters is not None else list(range(len(job.word)))

    paths: dict[int, GlyphPath] = {}
    entries = []
    for i, ch in enumerate(job.word):
        entry = {"index": i, "letter": ch, "optimized": i in indices, "status": "ok"}
        try:
            paths[i] = prepare_letter(font_bytes, ch, job.subdivision_targets)
            entry["advance"] = paths[i].advance
        except WordAsImageError as exc:
            entry["status"] = "error"
            entry["error"] = f"{type(exc).__name__}: {exc}"
        entries.append(entry)

    files: list[str] = []

    def emit(name: str, writer) -> str:
        full = os.path.join(job.out_dir, name)
        writer(full)
        files.append(name)
        return name

    # untouched word and per-letter original geometry
    ok_entries = [e for e in entries if e["status"] == "ok"]
    compose_entries = []
    x = 0.0
    for e in entries:
        if e["status"] != "ok":
            continue
        g = paths[e["index"]]
        compose_entries.append((g, x))
        x += g.advance
    if compose_entries:
        emit("original.svg", lambda p: svgio.compose_svg(compose_entries, x, p))
    for e in ok_entries:
        i = e["index"]
        e["original_json"] = emit(
            f"glyph_{i}_original.json",
            lambda p, i=i: _write_json(fonts.to_json_dict(paths[i]), p),
        )

    def optimize_one(i: int):
        return engine.optimize_letter(paths[i], cfg, seed_key=(i,))

    todo = [e for e in ok_entries if e["optimized"]]
    workers = job.jobs or max(1, min(len(todo) or 1, os.cpu_count() or 1))
    results: dict[int, object] = {}
    if todo:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {e["index"]: pool.submit(optimize_one, e["index"]) for e in todo}
        for i, fut in futures.items():
            try:
                results[i] = fut.result()
            except (engine.EngineAbort, WordAsImageError) as exc:
                results[i] = exc

    service_failure = False
    for e in todo:
        i = e["index"]
        res = results[i]
        if isinstance(res, Exception):
            e["status"] = "error"
            e["error"] = f"{type(res).__name__}: {res}"
            if isinstance(res, engine.EngineAbort):
                e["error"] = f"EngineAbort: {res.cause!r} at iteration {res.iteration}"
                if isinstance(res.cause, ServiceUnavailable):
                    service_failure = True
                partial = {k: v for k, v in res.traces.items()}
                if len(partial.get("lr", ())):
                    e["trace_csv"] = emit(
                        f"trace_{i}.csv",
                        lambda p, tr=partial: engine.write_trace_csv(tr, p),
                    )
            continue
        e["deformed_svg"] = emit(
            f"deformed_{i}.svg", lambda p, r=res: svgio.export_svg(r.path, p)
        )
        e["deformed_json"] = emit(
            f"glyph_{i}_deformed.json",
            lambda p, r=res: _write_json(fonts.to_json_dict(r.path), p),
        )
        e["trace_csv"] = emit(
            f"trace_{i}.csv", lambda p, r=res: engine.write_trace_csv(r.traces, p)
        )

    manifest = {
        "word": job.word,
        "concept": job.concept or job.word,
        "font": os.path.abspath(job.font),
        "font_id": next((paths[i].font_id for i in paths), ""),
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "letters": entries,
        "files": files,
        "service_failure": service_failure,
    }
    with open(os.path.join(job.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def compose_word(manifest_path: str, choices: dict[int, str], out_path: str) -> None:
    """Compose the word from per-letter original/deformed choices.

    Deformed letters keep the original advance width; layout is plain
    left-to-right placement on the shared baseline.
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = []
    x = 0.0
    for e in manifest["letters"]:
        if e["status"] != "ok":
            raise MissingArtifact(
                f"letter {e['index']} ({e['letter']!r}) failed: {e.get('error')}"
            )
        i = e["index"]
        choice = choices.get(i, "original")
        key = "deformed_json" if choice == "deformed" else "original_json"
        if key not in e:
            raise MissingArtifact(f"letter {i} has no {choice} artifact")
        full = os.path.join(base, e[key])
        if not os.path.exists(full):
            raise MissingArtifact(f"artifact missing on disk: {full}")
        with open(full, "r", encoding="utf-8") as fh:
            glyph = fonts.from_json_dict(json.load(fh))
        entries.append((glyph, x))
        x += e["advance"]
    svgio.compose_svg(entries, x, out_path)
