"""Application facade that wires the benchmark components together.

Each public method backs one CLI subcommand and writes only under the output
path it is given.
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

from .config import (
    ConfigurationManager, EvalConfig, GenConfig, NeighborBuildConfig, RenderStyle, ServeConfig, WindowSpec
)
from .embeddings import load_embeddings, load_tokenizer_meta, parse_tokenizer_meta
from .errors import ArtifactIOError, ConfigurationError, FormatError, ValidationError
from .evaluation import EvalReport, aggregate, load_responses, save_responses, stub_respond
from .generator import QuestionGenerator, load_items, serialize
from .logging import LogCategory, get_logger, performance_monitor
from .models import OrientationMode, ResponseRecord, SliceDirection
from .neighbors import NeighborTable, build_neighbor_table, load_table, save_table
from .relations import export_conventions
from .rendering import LETTERS, PALETTE, MediaManifest, overlay_for_label, render_media
from .server import DecodeServer
from .validation import AnswerKeyChecker, get_validation_summary
from .volume import (
    extract_frames, frame_layout, label_frames, load_label_names, load_labelmap,
    parse_nifti, reorient_to_ras
)
from .vocab import VocabPartition, build_partition


def _read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: parse error: {e.msg}", path=str(path), offset=e.pos, cause=e)


def scan_id_of(path: Union[str, Path]) -> str:
    """File name without ``.nii`` / ``.nii.gz``."""
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return Path(name).stem


class SemsamApp:
    """Orchestrates neighbor building, decoding, generation and evaluation."""

    def __init__(self, config_manager: Optional[ConfigurationManager] = None):
        self.config_manager = config_manager or ConfigurationManager()
        self.logger = get_logger("main")

    # decoding side

    @performance_monitor("build_neighbors", "main")
    def build_neighbors(
        self,
        embeddings_path: Union[str, Path],
        vocab_path: Union[str, Path],
        out_path: Union[str, Path],
        cfg: NeighborBuildConfig,
        partition_out: Optional[Union[str, Path]] = None,
        exclude_ids: Sequence[int] = ()
    ) -> NeighborTable:
        embeddings = load_embeddings(embeddings_path)
        partition = build_partition(load_tokenizer_meta(vocab_path), embeddings.rows, exclude_ids)
        table = build_neighbor_table(embeddings, partition, cfg)
        save_table(table, out_path)
        if partition_out is not None:
            partition.save(partition_out)
            self.logger.log_artifact("Saved vocabulary partition", "partition", str(partition_out),
                                     n_content=partition.n_content)
        return table

    def load_partition(
        self,
        vocab_path: Union[str, Path],
        v_emb: Optional[int] = None,
        exclude_ids: Sequence[int] = ()
    ) -> VocabPartition:
        """A partition file as written by ``build-neighbors``, or tokenizer
        metadata plus the embedding row count. ``exclude_ids`` only applies
        to tokenizer metadata; a partition file already records them.
        """
        data = _read_json(vocab_path)
        if isinstance(data, dict) and "content_ids" in data:
            return VocabPartition.from_json(json.dumps(data))
        if v_emb is None:
            raise ConfigurationError("tokenizer metadata needs --v-emb to build the partition", config_key="v_emb")
        return build_partition(parse_tokenizer_meta(data), v_emb, exclude_ids)

    def load_server(
        self,
        table_path: Union[str, Path],
        vocab_path: Union[str, Path],
        v_emb: Optional[int] = None,
        exclude_ids: Sequence[int] = ()
    ) -> DecodeServer:
        table = load_table(table_path)
        partition = self.load_partition(vocab_path, v_emb, exclude_ids)
        if not table.built_for(partition):
            raise ValidationError("neighbor table was built for a different vocabulary partition",
                                  field_name="table")
        return DecodeServer(table, partition)

    def step(self, server: DecodeServer, request_path: Union[str, Path]) -> Dict[str, Any]:
        """Answer one request file; the result may be an error response."""
        return server.handle_object(_read_json(request_path))

    async def serve(
        self,
        server: DecodeServer,
        serve_cfg: ServeConfig,
        stdin: Optional[TextIO] = None,
        stdout: Optional[TextIO] = None
    ) -> None:
        if serve_cfg.transport == "stdio":
            server.serve_stdio(stdin or sys.stdin, stdout or sys.stdout)
        elif serve_cfg.transport == "tcp":
            await server.serve_tcp(serve_cfg.host, serve_cfg.port)
        else:
            await server.serve_http(serve_cfg.host, serve_cfg.port)

    # benchmark side

    def load_scan(
        self,
        volume_path: Union[str, Path],
        labels_path: Union[str, Path],
        names_path: Optional[Union[str, Path]] = None
    ):
        names = load_label_names(names_path) if names_path else {}
        return parse_nifti(volume_path), load_labelmap(labels_path, names)

    @performance_monitor("generate", "main")
    def generate(
        self,
        volume_path: Union[str, Path],
        labels_path: Union[str, Path],
        out_dir: Union[str, Path],
        cfg: GenConfig,
        names_path: Optional[Union[str, Path]] = None
    ) -> Dict[str, Any]:
        """Write questions.jsonl, media/, coverage.json and conventions.json."""
        out_dir = Path(out_dir)
        volume, labelmap = self.load_scan(volume_path, labels_path, names_path)
        if cfg.scan_id is None:
            cfg.scan_id = scan_id_of(volume_path)

        generator = QuestionGenerator(volume, labelmap, cfg, media_dir=out_dir / "media")
        items = generator.run()
        check = AnswerKeyChecker(labelmap, generator.templates, cfg.isotropic_spacing).check_items(items)
        if not check.is_valid:
            for error in check.errors:
                self.logger.error(f"Answer key mismatch: {error}", LogCategory.GENERATION,
                                  correlation_id=cfg.scan_id)

        serialize(items, out_dir / "questions.jsonl")
        generator.manifest.save(out_dir / "media" / "media_manifest.json")
        generator.coverage.details = {
            "answer_key_check": get_validation_summary(check, len(items)),
            "config": cfg.to_dict(),
        }
        generator.coverage.save(out_dir / "coverage.json")
        export_conventions(out_dir / "conventions.json", generator.storage_codes, generator.templates.phrases)
        return {"items": len(items), "media": len(generator.manifest.entries),
                "mismatches": len(check.errors), "warnings": list(generator.coverage.warnings)}

    def render(
        self,
        volume_path: Union[str, Path],
        out_dir: Union[str, Path],
        direction: SliceDirection,
        mode: OrientationMode,
        window: WindowSpec,
        labels_path: Optional[Union[str, Path]] = None,
        style: Optional[RenderStyle] = None,
        ras_most_origin: bool = True
    ) -> List[str]:
        """Render one frame sequence; with labels, the first six structures get mask tints."""
        volume = reorient_to_ras(parse_nifti(volume_path), ras_most_origin)
        frames = extract_frames(volume, mode, direction, window)
        overlays: List[list] = [[] for _ in frames]
        if labels_path is not None:
            labelmap = reorient_to_ras(load_labelmap(labels_path, {}), ras_most_origin)
            if not labelmap.matches(volume):
                raise ValidationError("label map grid does not match the volume", field_name="labels")
            stack = label_frames(labelmap, frame_layout(volume, mode, direction))
            present = [int(v) for v in sorted(set(stack.ravel().tolist())) if v != 0][:len(PALETTE)]
            for i in range(len(frames)):
                for color, label_id in enumerate(present):
                    spec = overlay_for_label(stack[:, :, i], label_id, "mask", color, LETTERS[color])
                    if spec is not None:
                        overlays[i].append(spec)

        out_dir = Path(out_dir)
        media_ref = f"{scan_id_of(volume_path)}_{direction.value}_{mode.value}"
        files = render_media(frames, overlays, "image", out_dir, media_ref, style)
        manifest = MediaManifest()
        manifest.add(media_ref, files)
        manifest.save(out_dir / "media_manifest.json")
        return files

    @performance_monitor("evaluate", "main")
    def evaluate(
        self,
        questions_path: Union[str, Path],
        responses_path: Union[str, Path],
        out_path: Union[str, Path],
        cfg: Optional[EvalConfig] = None
    ) -> EvalReport:
        report = aggregate(load_items(questions_path), load_responses(responses_path), cfg)
        report.save(out_path)
        return report

    def stub_respond(
        self,
        questions_path: Union[str, Path],
        out_path: Union[str, Path],
        error_rate: float,
        seed: int
    ) -> List[ResponseRecord]:
        records = stub_respond(load_items(questions_path), error_rate, seed)
        save_responses(records, out_path)
        return records
