"""Command line interface for semsam-bench.

Exit codes: 0 success, 1 validation/configuration/argument errors, 2 any
other failure. Logs go to stderr; stdout carries ``step`` output and the
stdio protocol only.
"""

import argparse
import asyncio
import json
import sys
from typing import List, Optional

from . import __version__
from .config import ConfigurationManager, EvalConfig, NeighborBuildConfig, ServeConfig, WindowSpec
from .errors import ConfigurationError, SemsamError, ValidationError, report_error
from .logging import LogCategory, LogLevel, get_logger, get_performance_summary, initialize_logging
from .main import SemsamApp
from .models import OrientationMode, SliceDirection

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class SemsamArgumentParser(argparse.ArgumentParser):
    """Argument errors exit with the validation code instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _ids(text: str) -> List[int]:
    """Comma-separated token ids."""
    try:
        ids = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated id list: {text!r}")
    if any(i < 0 for i in ids):
        raise argparse.ArgumentTypeError("token ids must be non-negative")
    return ids


def _window(text: str) -> WindowSpec:
    """``percentile``, ``percentile:LOW,HIGH`` or ``hu:LEVEL,WIDTH``."""
    kind, _, values = text.partition(":")
    try:
        numbers = [float(v) for v in values.split(",")] if values else []
        if kind == "percentile":
            return WindowSpec.percentile(*numbers)
        if kind == "hu":
            return WindowSpec.hu_window(*numbers)
    except (TypeError, ValueError) as e:
        raise argparse.ArgumentTypeError(f"bad window {text!r}: {e}")
    raise argparse.ArgumentTypeError(f"window must start with 'percentile' or 'hu', got {text!r}")


class SemsamCLI:
    """Main CLI interface."""

    def __init__(self):
        self.config_manager = ConfigurationManager()
        self.app: Optional[SemsamApp] = None
        self.logger = None

    def create_parser(self) -> argparse.ArgumentParser:
        parser = SemsamArgumentParser(
            prog="semsam-bench",
            description="Semantic-neighborhood decoding and 3D spatial-reasoning benchmark tools",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
Examples:
  semsam-bench build-neighbors --embeddings emb.semb --vocab tokenizer.json --k 32 --out table.semn
  semsam-bench step --table table.semn --vocab partition.json --request req.json
  semsam-bench gen --volume ct.nii.gz --labels seg.nii.gz --names names.json --seed 7 --out run/
  semsam-bench stub-respond --questions run/questions.jsonl --error-rate 0.2 --seed 3 --out responses.jsonl
  semsam-bench eval --questions run/questions.jsonl --responses responses.jsonl --out report.json
            """
        )
        parser.add_argument("--version", action="version", version=__version__)
        parser.add_argument("--log-level", choices=[level.name for level in LogLevel],
                            help="Logging level (default: $SEMSAM_LOG or WARNING)")
        parser.add_argument("--log-file", help="Also write logs to this file")

        subparsers = parser.add_subparsers(dest="command", metavar="command")

        build = subparsers.add_parser("build-neighbors", help="Build the K-nearest-neighbor table")
        build.add_argument("--embeddings", required=True, help="SEMB embedding matrix")
        build.add_argument("--vocab", required=True, help="Tokenizer metadata JSON")
        build.add_argument("--k", type=int, required=True, help="Neighbors per row, self included")
        build.add_argument("--epsilon", type=float, default=1e-8, help="Norm floor (default: 1e-8)")
        build.add_argument("--block-size", type=int, default=128, help="Rows per similarity block")
        build.add_argument("--workers", type=int, default=1, help="Worker threads")
        build.add_argument("--out", required=True, help="Output SEMN table")
        build.add_argument("--partition-out", help="Also write the vocabulary partition JSON")
        build.add_argument("--exclude-ids", type=_ids, default=[], metavar="ID,ID,...",
                           help="Extra token ids to treat as non-content")

        for name, help_text in (("serve", "Serve decode requests"), ("step", "Answer one decode request")):
            sub = subparsers.add_parser(name, help=help_text)
            sub.add_argument("--table", required=True, help="SEMN neighbor table")
            sub.add_argument("--vocab", required=True,
                             help="Partition JSON, or tokenizer metadata together with --v-emb")
            sub.add_argument("--v-emb", type=int, help="Embedding rows when --vocab is tokenizer metadata")
            sub.add_argument("--exclude-ids", type=_ids, default=[], metavar="ID,ID,...",
                             help="Extra non-content ids when --vocab is tokenizer metadata")
            if name == "step":
                sub.add_argument("--request", required=True, help="JSON request file")
            else:
                transport = sub.add_mutually_exclusive_group()
                transport.add_argument("--stdio", action="store_true", help="JSON lines on stdin/stdout (default)")
                transport.add_argument("--listen", metavar="HOST:PORT", help="JSON lines over TCP")
                transport.add_argument("--http", metavar="HOST:PORT", help="HTTP: POST /step, GET /health")

        gen = subparsers.add_parser("gen", help="Generate question-answer items for one scan")
        gen.add_argument("--volume", required=True, help="Intensity NIfTI volume")
        gen.add_argument("--labels", required=True, help="Label NIfTI volume on the same grid")
        gen.add_argument("--names", help="JSON mapping label id to structure name")
        gen.add_argument("--config", help="Generator config (TOML, YAML or JSON)")
        gen.add_argument("--seed", type=_u64, required=True, help="Root seed")
        gen.add_argument("--scan-id", help="Scan identifier (default: volume file name)")
        gen.add_argument("--out", required=True, help="Output directory")

        render = subparsers.add_parser("render", help="Render a volume as a frame sequence")
        render.add_argument("--volume", required=True, help="Intensity NIfTI volume")
        render.add_argument("--labels", help="Label NIfTI volume drawn as mask tints")
        render.add_argument("--direction", choices=[d.value for d in SliceDirection], default="axial")
        render.add_argument("--mode", choices=[m.value for m in OrientationMode], default="standard_view")
        render.add_argument("--window", type=_window, default=WindowSpec(),
                            help="percentile[:LOW,HIGH] or hu:LEVEL,WIDTH (default: percentile)")
        render.add_argument("--out", required=True, help="Output directory")

        evaluate = subparsers.add_parser("eval", help="Score responses against answer keys")
        evaluate.add_argument("--questions", required=True, help="questions.jsonl")
        evaluate.add_argument("--responses", required=True, help="responses.jsonl")
        evaluate.add_argument("--config", help="Config file with an [evaluator] table")
        evaluate.add_argument("--prior", choices=sorted(EvalConfig.PRIORS), help="Credible-interval prior")
        evaluate.add_argument("--mass", type=float, help="Credible-interval mass")
        evaluate.add_argument("--scoring-mode", choices=["exact", "synonym"], help="Open-answer strictness")
        evaluate.add_argument("--out", required=True, help="Report JSON")

        stub = subparsers.add_parser("stub-respond", help="Write synthetic responses")
        stub.add_argument("--questions", required=True, help="questions.jsonl")
        stub.add_argument("--error-rate", type=float, required=True, help="Probability of a wrong answer")
        stub.add_argument("--seed", type=_u64, required=True, help="Response seed")
        stub.add_argument("--out", required=True, help="responses.jsonl")
        return parser

    def setup_logging(self, log_level: Optional[str], log_file: Optional[str] = None):
        initialize_logging(log_level=LogLevel.resolve(log_level), log_file=log_file)
        self.logger = get_logger("cli")

    async def run(self, args: Optional[List[str]] = None) -> int:
        parser = self.create_parser()
        try:
            parsed = parser.parse_args(args)
        except SystemExit as e:
            return e.code if isinstance(e.code, int) else EXIT_VALIDATION
        if parsed.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_VALIDATION

        self.setup_logging(parsed.log_level, parsed.log_file)
        self.app = SemsamApp(self.config_manager)
        self.logger.info(f"Executing command: {parsed.command}", LogCategory.AUDIT,
                         context={"command": parsed.command})

        handlers = {
            "build-neighbors": self._handle_build_neighbors,
            "serve": self._handle_serve,
            "step": self._handle_step,
            "gen": self._handle_gen,
            "render": self._handle_render,
            "eval": self._handle_eval,
            "stub-respond": self._handle_stub_respond,
        }
        try:
            return await handlers[parsed.command](parsed)
        except (ValidationError, ConfigurationError) as e:
            report_error(e)
            print(f"error: {e.get_user_message()}", file=sys.stderr)
            return EXIT_VALIDATION
        except SemsamError as e:
            report_error(e)
            print(f"error: {e.get_user_message()}", file=sys.stderr)
            return EXIT_RUNTIME
        except Exception as e:
            self.logger.critical(f"Unexpected error: {e}", LogCategory.ERROR,
                                 context={"error_type": type(e).__name__, "command": parsed.command})
            print(f"error: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        finally:
            summary = get_performance_summary()
            if summary.get("total_operations", 0) > 0:
                self.logger.info("Session performance summary", LogCategory.PERFORMANCE, context=summary)

    async def _handle_build_neighbors(self, args) -> int:
        try:
            cfg = NeighborBuildConfig(k=args.k, epsilon=args.epsilon, block_size=args.block_size,
                                      workers=args.workers)
        except ValueError as e:
            raise ConfigurationError(str(e), config_key="k", cause=e)
        table = self.app.build_neighbors(args.embeddings, args.vocab, args.out, cfg, args.partition_out,
                                         args.exclude_ids)
        print(f"Wrote {table.n} x {table.k} neighbor table to {args.out}", file=sys.stderr)
        return EXIT_OK

    async def _handle_step(self, args) -> int:
        server = self.app.load_server(args.table, args.vocab, args.v_emb, args.exclude_ids)
        response = self.app.step(server, args.request)
        print(json.dumps(response, separators=(",", ":")))
        return EXIT_VALIDATION if "error" in response else EXIT_OK

    async def _handle_serve(self, args) -> int:
        server = self.app.load_server(args.table, args.vocab, args.v_emb, args.exclude_ids)
        try:
            if args.listen:
                serve_cfg = ServeConfig.from_address("tcp", args.listen)
            elif args.http:
                serve_cfg = ServeConfig.from_address("http", args.http)
            else:
                serve_cfg = ServeConfig()
        except ValueError as e:
            raise ConfigurationError(str(e), config_key="address", cause=e)
        await self.app.serve(server, serve_cfg)
        return EXIT_OK

    async def _handle_gen(self, args) -> int:
        overrides = {"seed": args.seed}
        if args.scan_id:
            overrides["scan_id"] = args.scan_id
        if args.config:
            cfg = self.config_manager.load_gen_config(args.config, **overrides)
        else:
            cfg = self.config_manager.create_default_gen_config(args.seed)
            cfg.scan_id = args.scan_id
        summary = self.app.generate(args.volume, args.labels, args.out, cfg, args.names)
        print(f"Generated {summary['items']} items and {summary['media']} media into {args.out}",
              file=sys.stderr)
        for warning in summary["warnings"]:
            print(f"warning: {warning}", file=sys.stderr)
        return EXIT_OK if summary["mismatches"] == 0 else EXIT_RUNTIME

    async def _handle_render(self, args) -> int:
        files = self.app.render(args.volume, args.out, SliceDirection(args.direction),
                                OrientationMode(args.mode), args.window, args.labels)
        print(f"Rendered {len(files)} frames into {args.out}", file=sys.stderr)
        return EXIT_OK

    async def _handle_eval(self, args) -> int:
        overrides = {key: value for key, value in (("prior", args.prior), ("mass", args.mass),
                                                   ("scoring_mode", args.scoring_mode)) if value is not None}
        cfg = self.config_manager.load_eval_config(args.config, **overrides)
        report = self.app.evaluate(args.questions, args.responses, args.out, cfg)
        overall = report.overall
        accuracy = "n/a" if overall.accuracy is None else f"{overall.accuracy:.4f}"
        print(f"Scored {overall.n_scored}, omitted {overall.n_omitted}, accuracy {accuracy}", file=sys.stderr)
        return EXIT_OK

    async def _handle_stub_respond(self, args) -> int:
        records = self.app.stub_respond(args.questions, args.out, args.error_rate, args.seed)
        print(f"Wrote {len(records)} responses to {args.out}", file=sys.stderr)
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    cli = SemsamCLI()
    try:
        return asyncio.run(cli.run(argv))
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
