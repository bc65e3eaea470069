"""Command line: export an image folder + class list into resadapt files."""

import argparse
import sys
from pathlib import Path

from .errors import ExporterError
from .export import ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resadapt-export",
        description="Encode an image folder and class prompts into "
                    "resadapt bank/label/anchor/manifest files")
    parser.add_argument("--images", required=True,
                        help="root folder with one subfolder per class")
    parser.add_argument("--classes", required=True,
                        help="text file, one class name per line")
    parser.add_argument("--template", default="a photo of a {class}",
                        help="prompt template with {class} and optional {domain}")
    parser.add_argument("--domain", default=None,
                        help="domain description for decorated anchors and "
                             "the split's domain tag")
    parser.add_argument("--encoder", default="clip",
                        help="'clip', 'clip:<model_id>', or 'tiny-color'")
    parser.add_argument("--split-name", default=None,
                        help="split name in the manifest (default: domain or 'all')")
    parser.add_argument("--append", action="store_true",
                        help="add a split to an existing manifest in --out")
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    classes_path = Path(args.classes)
    if not classes_path.is_file():
        print(f"error: class list not found: {classes_path}", file=sys.stderr)
        return 1
    class_names = [line.strip() for line in classes_path.read_text().splitlines()
                   if line.strip()]
    try:
        job = ExportJob(image_root=args.images, class_names=class_names,
                        template=args.template, out_dir=args.out,
                        domain=args.domain, encoder=args.encoder,
                        split_name=args.split_name, append=args.append)
        manifest = export(job)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    print(f"manifest written to {manifest}")
    return 0


def console() -> None:
    sys.exit(main())
