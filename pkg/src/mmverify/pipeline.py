"""Case orchestration: stage ordering, per-stage caches, report assembly.

A case directory goes through ingest -> (media processing || evidence
retrieval) -> cross-validation -> forensic analysis -> report. Every stage
persists its output next to the case (shots.json, keyframes.json,
transcripts.json, evidence.json, crossval.json, forensic.json) and re-runs
reuse those files unless refresh is set, so a warm re-run touches no
backends. Stage failures are recorded and the pipeline keeps going with
whatever remains feasible; only persistence errors and invalid input are
fatal.
"""

from __future__ import annotations

import base64
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import audio as audio_mod
from . import evidence as evidence_mod
from .clients import (
    RealLlmClient,
    RealSearchClient,
    RealTranscriptionClient,
    RequestsFetcher,
    StubFetcher,
    StubLlmClient,
    StubSearchClient,
    StubTranscriptionClient,
    offline_mode,
)
from .embedding import EmbedderConfig, embed_frames
from .errors import (
    AuthError,
    DecodeFailure,
    EmptyMetadata,
    ExhaustedRetries,
    LlmRefusal,
    NoJsonFound,
    NoKeywords,
    PersistFailure,
    SchemaViolation,
    SidecarUnavailable,
)
from .evidence import EvidenceBuffer, build_evidence_buffer, extract_keywords, search
from .keyframes import (
    ClusteringConfig,
    aggregate_case_keyframes,
    prepare_llm_images,
    seed_from_case_id,
    select_shot_keyframes,
)
from .media import get_decoder
from .model import (
    Case,
    CaseMetadata,
    CrossValidation,
    ForensicAnalysis,
    FrameRef,
    Keyframe,
    MediaAsset,
    Shot,
    Transcript,
    VerificationReport,
    validate_case,
)
from .shots import ShotDetectorConfig, decode_video, detect_shots
from .verify import run_cross_validation, run_forensic_analysis

log = logging.getLogger(__name__)

STAGE_ORDER = ("ingested", "media_done", "evidence_done", "crossval_done",
               "forensic_done", "reported")
ALL_STAGES = frozenset({"media", "evidence", "crossval", "forensic", "report"})

_OUTPUT_FILES = {"metadata.json", "shots.json", "keyframes.json", "transcripts.json",
                 "evidence.json", "crossval.json", "forensic.json", "status.json",
                 "report.json", "report.md"}


@dataclass
class PipelineConfig:
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    shot: ShotDetectorConfig = field(default_factory=ShotDetectorConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    search_k: int = 10
    chunk_seconds: float = 30.0
    min_chunk_seconds: float = 1.0
    language_hint: str = "auto"
    offline: bool = False
    refresh: bool = False
    output_dir: Optional[str] = None  # default: the case directory itself
    stub_dir: Optional[str] = None  # default: <case_dir>/stubs
    max_in_flight: int = 4
    image_max_side: int = 256
    jpeg_quality: int = 85
    sidecar_cmd: str = ""
    llm_endpoint: str = ""
    llm_key: str = ""
    llm_model: str = ""
    search_endpoint: str = ""
    search_key: str = ""
    transcribe_endpoint: str = ""
    transcribe_key: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kwargs = dict(d)
        if "clustering" in kwargs:
            kwargs["clustering"] = ClusteringConfig(**kwargs["clustering"])
        if "shot" in kwargs:
            kwargs["shot"] = ShotDetectorConfig(**kwargs["shot"])
        if "embedder" in kwargs:
            kwargs["embedder"] = EmbedderConfig(**kwargs["embedder"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def resolved(self) -> "PipelineConfig":
        """Apply environment-variable overrides to backend settings."""
        env = os.environ
        return replace(
            self,
            llm_endpoint=env.get("LLM_API_ENDPOINT", self.llm_endpoint),
            llm_key=env.get("LLM_API_KEY", self.llm_key),
            llm_model=env.get("LLM_MODEL", self.llm_model),
            search_endpoint=env.get("SEARCH_API_ENDPOINT", self.search_endpoint),
            search_key=env.get("SEARCH_API_KEY", self.search_key),
            transcribe_endpoint=env.get("TRANSCRIBE_API_ENDPOINT", self.transcribe_endpoint),
            transcribe_key=env.get("TRANSCRIBE_API_KEY", self.transcribe_key),
        )


@dataclass
class CaseStatus:
    stage: str = "ingested"
    human_review_required: bool = False
    reasons: list = field(default_factory=list)

    def advance(self, stage: str):
        if STAGE_ORDER.index(stage) < STAGE_ORDER.index(self.stage):
            raise ValueError(f"stage cannot regress from {self.stage} to {stage}")
        self.stage = stage

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "human_review_required": self.human_review_required,
            "reasons": list(self.reasons),
        }


@dataclass
class ClientBundle:
    search: object
    llm: object
    transcribe: object
    fetcher: object


def build_clients(config: PipelineConfig, case_dir: Path) -> ClientBundle:
    """Stub clients when offline, environment-configured backends otherwise."""
    if config.offline:
        stub_dir = Path(config.stub_dir) if config.stub_dir else case_dir / "stubs"
        results_path = stub_dir / "search_results.json"
        search_client = (StubSearchClient.from_fixture(results_path)
                         if results_path.exists() else StubSearchClient([]))
        pages_path = stub_dir / "pages.json"
        pages = json.loads(pages_path.read_text()) if pages_path.exists() else {}
        transcripts_path = stub_dir / "transcript_map.json"
        mapping = (json.loads(transcripts_path.read_text())
                   if transcripts_path.exists() else {})
        return ClientBundle(
            search=search_client,
            llm=StubLlmClient(fixture_dir=stub_dir if stub_dir.exists() else None),
            transcribe=StubTranscriptionClient(mapping=mapping),
            fetcher=StubFetcher(pages),
        )
    return ClientBundle(
        search=RealSearchClient(config.search_endpoint, config.search_key),
        llm=RealLlmClient(config.llm_endpoint, config.llm_key, config.llm_model),
        transcribe=RealTranscriptionClient(config.transcribe_endpoint,
                                           config.transcribe_key),
        fetcher=RequestsFetcher(),
    )


def _write_json(path: Path, obj) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        raise PersistFailure(f"cannot write {path}: {exc}") from exc


def load_case(case_dir: Path, decoder=None) -> tuple[Case, list]:
    """Build a Case from a directory: metadata.json plus its media files.

    Derived outputs (kf_<n>.jpg, cache files) are never ingested as assets.
    Returns the case and any ingestion notes (e.g. empty metadata).
    """
    case_dir = Path(case_dir)
    if not case_dir.is_dir():
        raise FileNotFoundError(f"case directory {case_dir} does not exist")
    decoder = decoder or get_decoder()
    notes = []

    metadata_path = case_dir / "metadata.json"
    if metadata_path.exists():
        metadata = CaseMetadata.from_dict(json.loads(metadata_path.read_text()))
    else:
        metadata = CaseMetadata()
        notes.append("metadata.json missing; proceeding with empty metadata")

    assets = []
    for path in sorted(case_dir.iterdir()):
        if not path.is_file() or path.name in _OUTPUT_FILES:
            continue
        if path.name.startswith("kf_") and path.suffix == ".jpg":
            continue  # our own keyframe outputs
        ext = path.suffix.lower()
        if ext not in {".mp4", ".jpg", ".jpeg", ".png"}:
            continue
        kind = "video" if ext == ".mp4" else "image"
        duration = None
        if kind == "video":
            try:
                duration = decoder.probe_duration(str(path))
            except DecodeFailure:
                duration = None  # flagged properly at decode time
        assets.append(MediaAsset(path.stem, kind, str(path), duration))

    try:
        case = validate_case(metadata, assets, case_id=case_dir.name)
    except EmptyMetadata:
        notes.append("evidence retrieval skipped: title and description are both empty")
        case = validate_case(metadata, assets, case_id=case_dir.name,
                             allow_empty_metadata=True)
    return case, notes


@dataclass
class _MediaOutput:
    keyframes: list = field(default_factory=list)
    images_b64: list = field(default_factory=list)
    image_files: list = field(default_factory=list)
    transcripts: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    review: list = field(default_factory=list)
    transcripts_reason: str = ""
    keyframes_reason: str = ""


def _start_sidecar(config: PipelineConfig, notes: list):
    if config.embedder.embedder != "sidecar" and config.shot.detector != "sidecar":
        return None
    if not config.sidecar_cmd:
        notes.append("sidecar selected but no sidecar command configured; using built-ins")
        return None
    from .sidecar import SidecarClient
    client = SidecarClient(config.sidecar_cmd)
    try:
        client.start()
        return client
    except SidecarUnavailable as exc:
        notes.append(f"sidecar unavailable ({exc}); falling back to built-in models")
        return None


def _media_stage(case: Case, config: PipelineConfig, out_dir: Path,
                 clients: ClientBundle) -> _MediaOutput:
    out = _MediaOutput()
    clustering = config.clustering
    if clustering.seed is None:
        clustering = replace(clustering, seed=seed_from_case_id(case.case_id))
    decoder = get_decoder(config.shot.decoder_path)

    manifest_path = out_dir / "keyframes.json"
    if manifest_path.exists() and not config.refresh:
        manifest = json.loads(manifest_path.read_text())
        for entry in manifest["keyframes"]:
            out.keyframes.append(Keyframe.from_dict(entry))
            image_path = out_dir / entry["image"]
            out.images_b64.append(base64.b64encode(image_path.read_bytes()).decode("ascii"))
            out.image_files.append(entry["image"])
    else:
        sidecar = _start_sidecar(config, out.notes)
        shot_cfg = config.shot
        embed_cfg = config.embedder
        if sidecar is None:
            if shot_cfg.detector == "sidecar":
                shot_cfg = replace(shot_cfg, detector="histogram")
            if embed_cfg.embedder == "sidecar":
                embed_cfg = replace(embed_cfg, embedder="classical")
        try:
            _run_visual_pipeline(case, config, out_dir, out, clustering,
                                 shot_cfg, embed_cfg, decoder, sidecar)
        finally:
            if sidecar is not None:
                sidecar.close()
    if not out.keyframes and not out.keyframes_reason:
        out.keyframes_reason = "no decodable media"

    _run_audio_pipeline(case, config, out_dir, out, decoder, clients)
    return out


def _run_visual_pipeline(case, config, out_dir, out, clustering,
                         shot_cfg, embed_cfg, decoder, sidecar):
    shots_path = out_dir / "shots.json"
    cached_shots = {}
    if shots_path.exists() and not config.refresh:
        cached_shots = json.loads(shots_path.read_text()).get("assets", {})

    gathered = []  # (Keyframe, buffer, Embedding)
    shots_record = {}
    for asset in sorted(case.assets, key=lambda a: a.asset_id):
        if asset.kind == "video":
            try:
                seq = decode_video(asset.path, shot_cfg.sample_fps, decoder,
                                   asset.asset_id)
            except DecodeFailure as exc:
                out.review.append(f"video {asset.asset_id!r} could not be decoded: {exc}")
                continue
            cached = cached_shots.get(asset.asset_id)
            if cached and cached.get("sampled_frames") == len(seq):
                shot_list = [Shot(asset.asset_id, s, e) for s, e in cached["shots"]]
            else:
                shot_list = detect_shots(seq, shot_cfg, sidecar=sidecar)
            shots_record[asset.asset_id] = {
                "shots": [[s.start_frame, s.end_frame] for s in shot_list],
                "sampled_frames": len(seq),
                "native_fps": seq.native_fps,
            }
            embeddings = embed_frames(seq.buffers(), embed_cfg, sidecar=sidecar)
            refs = seq.refs()
            position = {ref.frame_index: i for i, ref in enumerate(refs)}
            for shot in shot_list:
                lo, hi = shot.start_frame, shot.end_frame + 1
                selected = select_shot_keyframes(shot, refs[lo:hi],
                                                 embeddings[lo:hi], clustering)
                for keyframe in selected:
                    pos = position[keyframe.frame.frame_index]
                    gathered.append((keyframe, seq.frames[pos][1], embeddings[pos]))
        else:
            try:
                image = decoder.decode_image(asset.path)
            except DecodeFailure as exc:
                out.review.append(f"image {asset.asset_id!r} could not be decoded: {exc}")
                continue
            embedding = embed_frames([image], embed_cfg, sidecar=sidecar)[0]
            keyframe = Keyframe(FrameRef(asset.asset_id, 0, 0.0),
                                Shot(asset.asset_id, 0, 0), 0, 0.0)
            gathered.append((keyframe, image, embedding))

    if shots_record:
        _write_json(shots_path, {"assets": shots_record})

    if not gathered:
        out.keyframes_reason = "no decodable media"
        _write_json(out_dir / "keyframes.json", {"keyframes": []})
        return

    final = aggregate_case_keyframes([g[0] for g in gathered],
                                     [g[2] for g in gathered], clustering)
    by_key = {(g[0].frame.asset_id, g[0].frame.frame_index): g[1] for g in gathered}
    with_buffers = [(k, by_key[(k.frame.asset_id, k.frame.frame_index)]) for k in final]
    prepared = prepare_llm_images(with_buffers, config.image_max_side,
                                  config.jpeg_quality)

    manifest = []
    for i, (keyframe, image_b64) in enumerate(prepared):
        name = f"kf_{i}.jpg"
        try:
            (out_dir / name).write_bytes(base64.b64decode(image_b64))
        except OSError as exc:
            raise PersistFailure(f"cannot write {out_dir / name}: {exc}") from exc
        out.keyframes.append(keyframe)
        out.images_b64.append(image_b64)
        out.image_files.append(name)
        manifest.append({**keyframe.to_dict(), "image": name})
    _write_json(out_dir / "keyframes.json", {"keyframes": manifest})


def _run_audio_pipeline(case, config, out_dir, out, decoder, clients):
    transcripts_path = out_dir / "transcripts.json"
    if transcripts_path.exists() and not config.refresh:
        data = json.loads(transcripts_path.read_text())
        out.transcripts = [Transcript.from_dict(t) for t in data["transcripts"]]
        out.notes.extend(data.get("notes", []))
        out.transcripts_reason = data.get("reason", "")
        return

    chunks = []
    audio_notes = []
    for asset in sorted(case.videos(), key=lambda a: a.asset_id):
        try:
            stream = audio_mod.extract_audio(asset, decoder)
        except DecodeFailure as exc:
            out.review.append(f"audio of {asset.asset_id!r} could not be decoded: {exc}")
            continue
        if stream is None:
            audio_notes.append(f"{asset.asset_id}: no audio track; transcript skipped")
            continue
        chunks.extend(audio_mod.chunk_audio(stream, config.chunk_seconds,
                                            config.min_chunk_seconds))

    reason = ""
    transcripts = []
    if chunks:
        try:
            transcripts = audio_mod.transcribe_case(
                chunks, clients.transcribe, config.language_hint,
                config.max_in_flight,
            )
        except AuthError as exc:
            reason = f"transcription authentication failed: {exc}"
    elif not case.videos():
        reason = "no video assets"
    elif not audio_notes and not out.review:
        reason = "no audio found"
    out.transcripts = transcripts
    out.notes.extend(audio_notes)
    out.transcripts_reason = reason
    _write_json(transcripts_path, {
        "transcripts": [t.to_dict() for t in transcripts],
        "notes": audio_notes,
        "reason": reason,
    })


@dataclass
class _EvidenceOutput:
    buffer: EvidenceBuffer = None
    notes: list = field(default_factory=list)
    reason: str = ""


def _empty_buffer(case_id: str) -> EvidenceBuffer:
    return EvidenceBuffer(case_id, (), fetched_at="")


def _evidence_stage(case: Case, config: PipelineConfig, out_dir: Path,
                    clients: ClientBundle) -> _EvidenceOutput:
    out = _EvidenceOutput(buffer=_empty_buffer(case.case_id))
    buffer_path = out_dir / "evidence.json"
    if buffer_path.exists() and not config.refresh:
        out.buffer = EvidenceBuffer.from_dict(json.loads(buffer_path.read_text()))
        if not out.buffer.documents:
            out.notes.append("no external sources")
        return out

    if not case.metadata.can_retrieve():
        out.reason = "title and description are both empty"
        return out
    try:
        query = extract_keywords(case.metadata.title, case.metadata.description)
    except NoKeywords:
        out.reason = "no usable keywords in title or description"
        return out

    results = search(query, k=config.search_k, client=clients.search)
    out.buffer = build_evidence_buffer(
        case.case_id, results, clients.fetcher, out_dir,
        media_link=case.metadata.media_link, k=config.search_k,
        refresh=config.refresh, max_in_flight=config.max_in_flight,
    )
    if not out.buffer.documents:
        out.notes.append("no external sources")
    return out


def _cached_engine_stage(path: Path, refresh: bool):
    if path.exists() and not refresh:
        return json.loads(path.read_text())
    return None


def _crossval_stage(buffer: EvidenceBuffer, config: PipelineConfig, out_dir: Path,
                    clients: ClientBundle):
    """Returns (CrossValidation | None, refusal: bool, problems: list)."""
    path = out_dir / "crossval.json"
    cached = _cached_engine_stage(path, config.refresh)
    if cached is not None:
        result = (CrossValidation.from_dict(cached["result"])
                  if cached.get("result") else None)
        return result, cached.get("refusal", False), list(cached.get("problems", []))

    result, refusal, problems = None, False, []
    try:
        result = run_cross_validation(buffer, clients.llm)
    except LlmRefusal as exc:
        refusal = True
        problems.append(f"LLM refused cross-validation: {exc}")
    except (NoJsonFound, SchemaViolation) as exc:
        problems.append(f"cross-validation response unparseable: {exc}")
    except (ExhaustedRetries, AuthError) as exc:
        problems.append(f"cross-validation call failed: {exc}")
    _write_json(path, {"result": result.to_dict() if result else None,
                       "refusal": refusal, "problems": problems})
    return result, refusal, problems


def _forensic_stage(images: list, crossval: Optional[CrossValidation],
                    config: PipelineConfig, out_dir: Path, clients: ClientBundle):
    """Returns (ForensicAnalysis | None, refusal: bool, problems: list)."""
    path = out_dir / "forensic.json"
    cached = _cached_engine_stage(path, config.refresh)
    if cached is not None:
        result = (ForensicAnalysis.from_dict(cached["result"])
                  if cached.get("result") else None)
        return result, cached.get("refusal", False), list(cached.get("problems", []))

    result, refusal, problems = None, False, []
    try:
        result = run_forensic_analysis(images, crossval, clients.llm)
    except LlmRefusal as exc:
        refusal = True
        problems.append(f"LLM refused forensic analysis: {exc}")
    except (NoJsonFound, SchemaViolation) as exc:
        problems.append(f"forensic response unparseable: {exc}")
    except (ExhaustedRetries, AuthError) as exc:
        problems.append(f"forensic call failed: {exc}")
    _write_json(path, {"result": result.to_dict() if result else None,
                       "refusal": refusal, "problems": problems})
    return result, refusal, problems


def assemble_report(
    case: Case,
    crossval: Optional[CrossValidation],
    forensic: Optional[ForensicAnalysis],
    transcripts: list,
    buffer: EvidenceBuffer,
    keyframes: list,
    status: CaseStatus,
    out_dir: Path,
    image_files: Optional[list] = None,
    section_reasons: Optional[dict] = None,
    review_reasons: Optional[list] = None,
) -> VerificationReport:
    """Write report.json and report.md; deterministic for identical inputs."""
    section_reasons = section_reasons or {}
    image_files = image_files or []
    report = VerificationReport(
        case_id=case.case_id,
        cross_validation=crossval,
        forensic=forensic,
        transcripts=tuple(transcripts),
        sources=tuple(buffer.documents),
        keyframe_manifest=tuple(keyframes),
        human_review_required=status.human_review_required,
        human_review_reason="; ".join(review_reasons or []),
    )
    doc = report.to_dict()
    doc["metadata"] = case.metadata.to_dict()
    doc["stage_notes"] = list(status.reasons)
    for i, entry in enumerate(doc["keyframe_manifest"]):
        if i < len(image_files):
            entry["image"] = image_files[i]
    _write_json(out_dir / "report.json", doc)

    md = _render_markdown(case, crossval, forensic, transcripts, buffer,
                          keyframes, image_files, status, section_reasons)
    try:
        (out_dir / "report.md").write_text(md, encoding="utf-8")
    except OSError as exc:
        raise PersistFailure(f"cannot write report.md: {exc}") from exc
    return report


def _render_markdown(case, crossval, forensic, transcripts, buffer, keyframes,
                     image_files, status, section_reasons) -> str:
    from .verify import format_coordinates

    lines = [f"# Verification report: {case.case_id}", ""]
    meta = case.metadata
    lines += ["## Case metadata", ""]
    lines += [f"- **Title:** {meta.title or '(empty)'}",
              f"- **Description:** {meta.description or '(empty)'}",
              f"- **Location hint:** {meta.location_hint or '(empty)'}",
              f"- **Violence level:** {meta.violence_level or '(empty)'}",
              f"- **Category:** {meta.category or '(empty)'}"]
    if meta.media_link:
        lines.append(f"- **Media link:** <{meta.media_link}>")
    lines.append("")

    lines += ["## Step 1: Retrieved sources", ""]
    if buffer.documents:
        for doc in buffer.documents:
            flag = " (exact match)" if doc.exact_match else ""
            lines.append(f"{doc.rank}. [{doc.title or doc.link}]({doc.link}) "
                         f"— {doc.date}{flag}")
            if doc.content == "Failed to fetch the page.":
                lines.append(f"   - {doc.content}")
        lines.append("")
    else:
        reason = section_reasons.get("evidence", "no external sources")
        lines += [f"Sources: not available: {reason}", ""]

    lines += ["## Step 2: Selected keyframes", ""]
    if keyframes:
        for keyframe, name in zip(keyframes, image_files):
            lines.append(
                f"- ![{name}]({name}) `{keyframe.frame.asset_id}` "
                f"frame {keyframe.frame.frame_index} "
                f"(t={keyframe.frame.timestamp_s:.2f}s, "
                f"cluster {keyframe.cluster_id})"
            )
        lines.append("")
    else:
        reason = section_reasons.get("keyframes", "no media processed")
        lines += [f"Keyframes: not available: {reason}", ""]

    lines += ["## Step 3: Audio transcripts", ""]
    if transcripts:
        for t in transcripts:
            lines.append(f"- **{t.asset_id}** (language: {t.language})")
            for start, end, text in t.segments:
                lines.append(f"  - [{start:.0f}s–{end:.0f}s] {text or '(no text)'}")
            for note in t.notes:
                lines.append(f"  - note: {note}")
        lines.append("")
    else:
        reason = section_reasons.get("transcripts", "no audio found")
        lines += [f"Audio transcripts: not available: {reason}", ""]

    lines += ["## Step 4: Cross-validation of sources", ""]
    if crossval is not None:
        lines.append(f"- **Location:** {crossval.location_name or '(not reported)'}")
        if crossval.coordinates:
            lines.append(f"- **Coordinates:** {format_coordinates(crossval.coordinates)}")
        if crossval.date_span:
            span = crossval.date_span
            lines.append(f"- **Date span:** {span.earliest.isoformat()} to "
                         f"{span.latest.isoformat()} ({span.days} days)")
        lines.append(f"- **Consensus:** {crossval.consensus.value}")
        if crossval.notes:
            lines.append(f"- **Notes:** {crossval.notes}")
        if crossval.consensus_about:
            lines.append(f"- **About (consensus):** {crossval.consensus_about}")
        if crossval.conflicts:
            lines.append(f"- **Conflicts:** {crossval.conflicts}")
        if crossval.tags:
            lines.append(f"- **Tags:** {', '.join(crossval.tags)}")
        lines.append("")
    else:
        reason = section_reasons.get("crossval", "stage not run")
        lines += [f"Cross-validation: not available: {reason}", ""]

    lines += ["## Step 5: Forensic analysis", ""]
    if forensic is not None:
        mv = forensic.metadata_validation
        lines += [f"- **Location check:** {mv.get('location', '')}",
                  f"- **Event check:** {mv.get('event', '')}",
                  f"- **People:** {mv.get('people', '')}",
                  f"- **Authenticity:** {forensic.authenticity}",
                  f"- **Evidence:** {forensic.auth_evidence}",
                  f"- **Synthetic content:** {forensic.synt_type}",
                  f"- **Other observations:** {forensic.other}", ""]
    else:
        reason = section_reasons.get("forensic", "stage not run")
        lines += [f"Forensic analysis: not available: {reason}", ""]

    lines += ["## Pipeline status", ""]
    lines.append(f"- Stage reached: {status.stage}")
    lines.append(f"- Human review required: "
                 f"{'yes' if status.human_review_required else 'no'}")
    for reason in status.reasons:
        lines.append(f"- {reason}")
    lines.append("")
    return "\n".join(lines)


def run_case(case_dir: Path, config: PipelineConfig,
             clients: Optional[ClientBundle] = None,
             stages: frozenset = ALL_STAGES) -> CaseStatus:
    """Execute the pipeline for one case directory.

    Stage failures are recorded in the returned CaseStatus and never abort
    the run; refusals and decode failures additionally flag the case for
    human review. Fatal: missing/invalid case input and persistence errors.
    """
    case_dir = Path(case_dir)
    config = config.resolved()
    out_dir = Path(config.output_dir) if config.output_dir else case_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    status = CaseStatus()
    review: list = []
    section_reasons: dict = {}
    report_only = stages == frozenset({"report"})

    with offline_mode(config.offline):
        if clients is None:
            clients = build_clients(config, case_dir)
        case, ingest_notes = load_case(case_dir)
        if report_only:
            # assembly from cache: replay the recorded run's notes and flags
            status_path = out_dir / "status.json"
            if status_path.exists():
                recorded = json.loads(status_path.read_text())
                status.reasons = [r for r in recorded.get("reasons", [])]
                review = list(recorded.get("review_reasons", []))
                status.human_review_required = bool(review)
        else:
            status.reasons.extend(ingest_notes)

        media = _MediaOutput(keyframes_reason="stage not run",
                             transcripts_reason="stage not run")
        evidence_out = _EvidenceOutput(buffer=_empty_buffer(case.case_id),
                                       reason="stage not run")

        with ThreadPoolExecutor(max_workers=2) as pool:
            media_future = (pool.submit(_media_stage, case, config, out_dir, clients)
                            if "media" in stages else None)
            evidence_future = (pool.submit(_evidence_stage, case, config, out_dir, clients)
                               if "evidence" in stages else None)
            if media_future is not None:
                media = media_future.result()
            if evidence_future is not None:
                evidence_out = evidence_future.result()

        if "media" in stages:
            status.reasons.extend(media.notes)
            review.extend(media.review)
            status.advance("media_done")
        elif "report" in stages:
            media = _load_media_from_cache(out_dir)
        if "evidence" in stages:
            status.reasons.extend(evidence_out.notes)
            if evidence_out.reason:
                status.reasons.append(f"evidence retrieval skipped: {evidence_out.reason}")
            status.advance("evidence_done")
        elif "report" in stages:
            evidence_out = _load_evidence_from_cache(out_dir, case.case_id)
        if media.keyframes_reason:
            section_reasons["keyframes"] = media.keyframes_reason
        if media.transcripts_reason:
            section_reasons["transcripts"] = media.transcripts_reason
        if evidence_out.reason:
            section_reasons["evidence"] = evidence_out.reason

        crossval, forensic = None, None
        if "crossval" in stages:
            crossval, cv_refusal, cv_problems = _crossval_stage(
                evidence_out.buffer, config, out_dir, clients)
            status.reasons.extend(cv_problems)
            if cv_refusal:
                review.extend(cv_problems or ["LLM refused cross-validation"])
            if crossval is None:
                section_reasons["crossval"] = (
                    "LLM refusal" if cv_refusal else
                    (cv_problems[0] if cv_problems else "stage not run"))
            status.advance("crossval_done")
        else:
            crossval = _load_cached_crossval(out_dir)

        if "forensic" in stages:
            if not media.images_b64:
                reason = "no keyframes available"
                status.reasons.append(f"forensic analysis skipped: {reason}")
                section_reasons["forensic"] = reason
            elif crossval is None:
                reason = "cross-validation unavailable"
                status.reasons.append(f"forensic analysis skipped: {reason}")
                section_reasons["forensic"] = reason
            else:
                forensic, f_refusal, f_problems = _forensic_stage(
                    media.images_b64, crossval, config, out_dir, clients)
                status.reasons.extend(f_problems)
                if f_refusal:
                    review.extend(f_problems or ["LLM refused forensic analysis"])
                if forensic is None:
                    section_reasons["forensic"] = (
                        "LLM refusal" if f_refusal else
                        (f_problems[0] if f_problems else "stage not run"))
            status.advance("forensic_done")
        else:
            forensic = _load_cached_forensic(out_dir)

        # review-worthy reasons surface both in reasons and in the review flag
        if not report_only:
            for reason in review:
                if reason not in status.reasons:
                    status.reasons.append(reason)
            if review:
                status.human_review_required = True

        if "report" in stages:
            assemble_report(case, crossval, forensic, media.transcripts,
                            evidence_out.buffer, media.keyframes, status,
                            out_dir, media.image_files, section_reasons,
                            review_reasons=review)
            status.advance("reported")

    if not report_only or not (out_dir / "status.json").exists():
        _write_json(out_dir / "status.json",
                    {**status.to_dict(), "review_reasons": review})
    return status


def _load_media_from_cache(out_dir: Path) -> _MediaOutput:
    """Rebuild the media outputs from cache files for report-only assembly."""
    out = _MediaOutput(keyframes_reason="stage not run",
                       transcripts_reason="stage not run")
    manifest_path = out_dir / "keyframes.json"
    if manifest_path.exists():
        out.keyframes_reason = ""
        for entry in json.loads(manifest_path.read_text()).get("keyframes", []):
            out.keyframes.append(Keyframe.from_dict(entry))
            image_path = out_dir / entry["image"]
            if image_path.exists():
                out.images_b64.append(
                    base64.b64encode(image_path.read_bytes()).decode("ascii"))
                out.image_files.append(entry["image"])
        if not out.keyframes:
            out.keyframes_reason = "no decodable media"
    transcripts_path = out_dir / "transcripts.json"
    if transcripts_path.exists():
        data = json.loads(transcripts_path.read_text())
        out.transcripts = [Transcript.from_dict(t) for t in data["transcripts"]]
        out.transcripts_reason = data.get("reason", "")
    return out


def _load_evidence_from_cache(out_dir: Path, case_id: str) -> _EvidenceOutput:
    out = _EvidenceOutput(buffer=_empty_buffer(case_id), reason="stage not run")
    buffer_path = out_dir / "evidence.json"
    if buffer_path.exists():
        out.buffer = EvidenceBuffer.from_dict(json.loads(buffer_path.read_text()))
        out.reason = ""
        if not out.buffer.documents:
            out.notes.append("no external sources")
    return out


def _load_cached_crossval(out_dir: Path) -> Optional[CrossValidation]:
    path = out_dir / "crossval.json"
    if not path.exists():
        return None
    cached = json.loads(path.read_text())
    return CrossValidation.from_dict(cached["result"]) if cached.get("result") else None


def _load_cached_forensic(out_dir: Path) -> Optional[ForensicAnalysis]:
    path = out_dir / "forensic.json"
    if not path.exists():
        return None
    cached = json.loads(path.read_text())
    return ForensicAnalysis.from_dict(cached["result"]) if cached.get("result") else None
