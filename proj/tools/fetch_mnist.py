#!/usr/bin/env python3
"""Fetch the four MNIST IDX files into data/mnist/.

The repository ships gzipped copies under data/mnist/, so running this is
only needed for a fresh checkout without them. Files are verified against
the canonical MD5 sums.
"""

import gzip
import hashlib
import pathlib
import sys
import urllib.request

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]

FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

# MD5 of the decompressed payloads, for copies obtained elsewhere.
RAW_MD5 = {
    "train-images-idx3-ubyte": "6bbc9ace898e44ae57da46a324031adb",
    "train-labels-idx1-ubyte": "a25bea736e30d166cdddb491f175f624",
    "t10k-images-idx3-ubyte": "2646ac647ad5339dbf082846283269ea",
    "t10k-labels-idx1-ubyte": "27ae3e4e09519cfbb04c329615203637",
}


def md5(path: pathlib.Path) -> str:
    return hashlib.md5(path.read_bytes()).hexdigest()


def gz_payload_md5(path: pathlib.Path) -> str:
    with gzip.open(path, "rb") as fh:
        return hashlib.md5(fh.read()).hexdigest()


def main() -> int:
    out_dir = pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, digest in FILES.items():
        target = out_dir / name
        raw = out_dir / name[: -len(".gz")]
        # Accept any gzip whose payload checks out (gzip headers vary), any
        # matching raw copy, or the canonical archive itself.
        if target.exists() and (md5(target) == digest or
                                gz_payload_md5(target) == RAW_MD5[raw.name]):
            print(f"{name}: already present")
            continue
        if raw.exists() and md5(raw) == RAW_MD5[raw.name]:
            print(f"{raw.name}: already present (uncompressed)")
            continue
        fetched = False
        for mirror in MIRRORS:
            url = mirror + name
            try:
                print(f"fetching {url}")
                urllib.request.urlretrieve(url, target)
            except OSError as err:
                print(f"  failed: {err}")
                continue
            if md5(target) == digest:
                fetched = True
                break
            print("  checksum mismatch, trying next mirror")
        if not fetched:
            print(f"could not fetch {name}; place it in {out_dir} manually")
            return 1
        # Verify the payload too.
        with gzip.open(target, "rb") as fh:
            payload = fh.read()
        if hashlib.md5(payload).hexdigest() != RAW_MD5[raw.name]:
            print(f"{name}: decompressed payload has unexpected checksum")
            return 1
    print("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
