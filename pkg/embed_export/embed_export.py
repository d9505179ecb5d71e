"""Export image embeddings from a pretrained vision backbone into LGEM.

Feeds real image folders to the unlearning toolchain: each image becomes one
LGEM record holding a stable id, a class index, and the backbone's
penultimate-layer features (the classification head is dropped). The
resulting file is a plain embedding dataset; nothing downstream knows or
cares that a network produced it.

Layout contract: ``<data>/<class-name>/<image files>``. Class indices follow
sorted subfolder names. Record ids are the first eight bytes (big-endian) of
sha256 over the image's path relative to the data root, so re-exporting an
unchanged tree yields identical ids and labels; float features are only
guaranteed stable within one backend version, which the manifest records.
"""

import argparse
import hashlib
import json
import logging
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image
from torchvision import models, transforms

log = logging.getLogger("embed_export")

LGEM_MAGIC = b"LGEM"
LGEM_VERSION = 1
_HEADER = struct.Struct("<4sHIII")  # magic, version, N, d, C

_PREPROCESS = transforms.Compose(
    [
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ]
)


class ExportError(Exception):
    pass


def stable_id(relpath: str) -> int:
    """First eight sha256 bytes of the relative path, as a big-endian u64."""
    return int.from_bytes(hashlib.sha256(relpath.encode("utf-8")).digest()[:8], "big")


def build_backbone(name: str, weights: str, device: str):
    """Instantiate the named torchvision model and drop its classifier.

    Returns (model in eval mode, penultimate feature width).
    """
    try:
        if weights == "pretrained":
            net = models.get_model(name, weights="DEFAULT")
        else:
            # Random weights are a test/offline mode; seed so one environment
            # re-exports identically.
            torch.manual_seed(0)
            net = models.get_model(name, weights=None)
    except (ValueError, KeyError) as e:
        raise ExportError(f"unknown model {name!r}: {e}") from e
    except Exception as e:  # weight download/load failure
        raise ExportError(f"could not obtain weights for {name!r}: {e}") from e

    if isinstance(getattr(net, "fc", None), torch.nn.Linear):
        dim = net.fc.in_features
        net.fc = torch.nn.Identity()
    elif isinstance(getattr(net, "classifier", None), torch.nn.Linear):
        dim = net.classifier.in_features
        net.classifier = torch.nn.Identity()
    elif isinstance(getattr(net, "classifier", None), torch.nn.Sequential) and isinstance(
        net.classifier[-1], torch.nn.Linear
    ):
        dim = net.classifier[-1].in_features
        net.classifier[-1] = torch.nn.Identity()
    else:
        raise ExportError(f"cannot locate the classification head of {name!r}")
    return net.to(device).eval(), int(dim)


def scan_tree(root: Path):
    """Walk the class folders; returns (classes, [(relpath, label)], skipped).

    Unreadable images are skipped with a warning and reported; a class folder
    that is empty, or whose every file is unreadable, is a hard error since
    the export would silently misrepresent the label space.
    """
    if not root.is_dir():
        raise ExportError(f"data directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ExportError(f"no class subfolders under {root}")

    classes = [p.name for p in class_dirs]
    items: list[tuple[str, int]] = []
    skipped: list[str] = []
    for label, cdir in enumerate(class_dirs):
        kept = 0
        for f in sorted(p for p in cdir.iterdir() if p.is_file()):
            rel = f.relative_to(root).as_posix()
            try:
                with Image.open(f) as img:
                    img.verify()
            except Exception:
                log.warning("skipping unreadable image %s", rel)
                skipped.append(rel)
                continue
            items.append((rel, label))
            kept += 1
        if kept == 0:
            raise ExportError(f"class folder {cdir.name!r} has no readable images")
    return classes, items, skipped


def embed_images(root: Path, items, net, dim: int, device: str, batch_size: int):
    """Run batched inference; rows come back in the order of `items`."""
    out = np.empty((len(items), dim), dtype=np.float32)
    with torch.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            batch = torch.stack(
                [_PREPROCESS(Image.open(root / rel).convert("RGB")) for rel, _ in chunk]
            ).to(device)
            feats = net(batch)
            if feats.ndim != 2 or feats.shape[1] != dim:
                raise ExportError(
                    f"backbone produced shape {tuple(feats.shape)}, expected (*, {dim})"
                )
            out[start : start + len(chunk)] = feats.cpu().numpy().astype(np.float32)
    return out


def write_lgem(path: Path, ids, labels, encodings, num_classes: int) -> str:
    """Serialize records sorted by id; returns the file's sha256 hex digest."""
    order = np.argsort(ids, kind="stable")
    ids, labels, encodings = ids[order], labels[order], encodings[order]
    n, dim = encodings.shape
    rec = np.zeros(n, dtype=np.dtype([("id", "<u8"), ("label", "<u4"), ("enc", "<f4", (dim,))]))
    rec["id"], rec["label"], rec["enc"] = ids, labels, encodings
    blob = _HEADER.pack(LGEM_MAGIC, LGEM_VERSION, n, dim, num_classes) + rec.tobytes()
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def export(model: str, data: str, out: str, manifest: str, batch_size: int = 32,
           device: str = "cpu", weights: str = "pretrained") -> None:
    root = Path(data)
    classes, items, skipped = scan_tree(root)

    ids = np.array([stable_id(rel) for rel, _ in items], dtype=np.uint64)
    if np.unique(ids).size != ids.size:
        seen: dict[int, str] = {}
        for (rel, _), i in zip(items, ids):
            if int(i) in seen:
                raise ExportError(
                    f"id hash collision between {seen[int(i)]!r} and {rel!r}; rename one"
                )
            seen[int(i)] = rel
    labels = np.array([lab for _, lab in items], dtype=np.uint32)

    net, dim = build_backbone(model, weights, device)
    log.info("embedding %d images with %s (%s weights, dim %d)",
             len(items), model, weights, dim)
    encodings = embed_images(root, items, net, dim, device, batch_size)

    digest = write_lgem(Path(out), ids, labels, encodings, len(classes))
    Path(manifest).write_text(json.dumps({
        "model": model,
        "weights": weights,
        "feature_dim": dim,
        "num_records": len(items),
        "num_classes": len(classes),
        "classes": {name: i for i, name in enumerate(classes)},
        "skipped": skipped,
        "lgem_sha256": digest,
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
    }, indent=2) + "\n")
    log.info("wrote %s (%d records) and %s", out, len(items), manifest)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Export penultimate-layer image embeddings into an LGEM dataset."
    )
    parser.add_argument("--model", required=True,
                        help="torchvision model name, e.g. resnet34")
    parser.add_argument("--data", required=True,
                        help="image root with one subfolder per class")
    parser.add_argument("--out", required=True, help="output .lgem path")
    parser.add_argument("--manifest", required=True, help="output manifest .json path")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu", help="torch device hint")
    parser.add_argument("--weights", choices=["pretrained", "random"],
                        default="pretrained",
                        help="random skips the download; for tests and offline use")
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        export(args.model, args.data, args.out, args.manifest,
               batch_size=args.batch_size, device=args.device, weights=args.weights)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
