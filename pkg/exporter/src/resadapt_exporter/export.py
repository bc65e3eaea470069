"""Export pipeline: image folders + class list + prompt templates in,
bank/label/anchor/manifest files out.

Nothing algorithmic lives here: embeddings are written unnormalized, in
deterministic (sorted-path) order, and the primary toolkit does all the
classification and training against the emitted files.
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .encoders import get_encoder
from .errors import JobInvalid
from .formats import read_manifest, write_bank, write_labels, write_manifest

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".gif"}

CLASS_PLACEHOLDER = "{class}"
DOMAIN_PLACEHOLDER = "{domain}"


def render_prompt(template: str, class_name: str, domain: str | None) -> str:
    """Same substitution rule as the primary: {class} required exactly
    once, {domain} replaced or removed together with one adjacent space."""
    if template.count(CLASS_PLACEHOLDER) != 1:
        raise JobInvalid(
            f"template must contain {CLASS_PLACEHOLDER!r} exactly once: {template!r}")
    if domain is not None:
        out = template.replace(DOMAIN_PLACEHOLDER, domain)
    else:
        out = template.replace(" " + DOMAIN_PLACEHOLDER, "")
        out = out.replace(DOMAIN_PLACEHOLDER + " ", "")
        out = out.replace(DOMAIN_PLACEHOLDER, "")
    return out.replace(CLASS_PLACEHOLDER, class_name)


@dataclass
class ExportJob:
    """One export run: encode every image under image_root/<class>/ and
    the class prompts, then write a split into out_dir."""

    image_root: Path
    class_names: list
    template: str
    out_dir: Path
    domain: str | None = None
    encoder: str = "clip"
    split_name: str | None = None
    append: bool = False

    def __post_init__(self):
        self.image_root = Path(self.image_root)
        self.out_dir = Path(self.out_dir)
        self.class_names = [str(c) for c in self.class_names]
        if not self.class_names:
            raise JobInvalid("class list is empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise JobInvalid("class names must be unique")
        render_prompt(self.template, self.class_names[0], self.domain)
        missing = [c for c in self.class_names
                   if not (self.image_root / c).is_dir()]
        if missing:
            raise JobInvalid(
                f"class folders missing under {self.image_root}: {missing}")

    @property
    def effective_split_name(self) -> str:
        return self.split_name or self.domain or "all"


def _collect_images(job: ExportJob):
    """Decode images class by class in sorted-path order; undecodable
    files are skipped with a warning and reported back."""
    images, labels, skipped = [], [], []
    for index, name in enumerate(job.class_names):
        folder = job.image_root / name
        for path in sorted(folder.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS or not path.is_file():
                continue
            try:
                with Image.open(path) as img:
                    images.append(img.convert("RGB"))
                labels.append(index)
            except Exception:
                rel = str(path.relative_to(job.image_root))
                warnings.warn(f"skipping undecodable image {rel}")
                skipped.append(rel)
    return images, labels, skipped


def export(job: ExportJob) -> Path:
    """Run the job; returns the manifest path.

    With append=True the new split is added to an existing manifest (same
    class list and template required); anchors are written only on the
    initial export.
    """
    encoder = get_encoder(job.encoder)
    images, labels, skipped = _collect_images(job)
    if not images:
        raise JobInvalid(f"no decodable images under {job.image_root}")

    job.out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = job.out_dir / "manifest.json"
    split = job.effective_split_name
    bank_name = f"bank_{split}.emb"
    labels_name = f"labels_{split}.lbl"

    embeddings = encoder.encode_images(images)
    write_bank(embeddings, job.out_dir / bank_name)
    write_labels(labels, job.out_dir / labels_name)

    if job.append:
        if not manifest_path.is_file():
            raise JobInvalid(f"append requested but {manifest_path} does not exist")
        doc = read_manifest(manifest_path)
        if doc.get("class_names") != job.class_names:
            raise JobInvalid("append: class list differs from the existing manifest")
        if doc.get("prompt_template") != job.template:
            raise JobInvalid("append: template differs from the existing manifest")
        if any(s["name"] == split for s in doc["splits"]):
            raise JobInvalid(f"append: split {split!r} already present")
    else:
        plain = encoder.encode_texts(
            [render_prompt(job.template, c, None) for c in job.class_names])
        write_bank(plain, job.out_dir / "anchors_plain.emb")
        anchors = {"plain": "anchors_plain.emb"}
        doc = {
            "class_names": job.class_names,
            "prompt_template": job.template,
            "encoder": encoder.name,
            "anchors": anchors,
            "splits": [],
            "skipped": [],
        }
        if job.domain is not None:
            decorated = encoder.encode_texts(
                [render_prompt(job.template, c, job.domain)
                 for c in job.class_names])
            write_bank(decorated, job.out_dir / "anchors_domain.emb")
            anchors["domain_prior"] = "anchors_domain.emb"
            doc["domain_description"] = job.domain

    doc["splits"].append({
        "name": split,
        "bank_path": bank_name,
        "labels_path": labels_name,
        "domain_name": job.domain or split,
    })
    doc["skipped"] = sorted(set(doc.get("skipped", [])) | set(skipped))
    write_manifest(doc, manifest_path)
    return manifest_path
