#!/usr/bin/env python3
"""Fetch the four MNIST IDX files into a data directory.

Tries, in order:
  1. direct download of the gzipped IDX files from the usual mirrors;
  2. extraction from the npm package ``mnist-data``, which bundles the raw
     IDX files (useful behind registries that only mirror npm).

Usage: python scripts/fetch_mnist.py [DEST]   (default: data/mnist)
"""

import gzip
import io
import os
import shutil
import subprocess
import sys
import tarfile
import tempfile
import urllib.request

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

MIRRORS = [
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
]


def have_all(dest):
    return all(os.path.exists(os.path.join(dest, f)) for f in FILES)


def try_download(dest):
    for base in MIRRORS:
        try:
            for name in FILES:
                with urllib.request.urlopen(base + name + ".gz", timeout=30) as r:
                    raw = gzip.decompress(r.read())
                with open(os.path.join(dest, name), "wb") as f:
                    f.write(raw)
            return True
        except Exception as e:
            print(f"  mirror {base} failed: {e}")
    return False


def try_npm(dest):
    try:
        out = subprocess.run(["npm", "pack", "mnist-data", "--silent"],
                             capture_output=True, text=True, check=True,
                             cwd=tempfile.gettempdir())
    except (OSError, subprocess.CalledProcessError) as e:
        print(f"  npm pack failed: {e}")
        return False
    tarball = os.path.join(tempfile.gettempdir(), out.stdout.strip().splitlines()[-1])
    with tarfile.open(tarball) as tar:
        members = {os.path.basename(m.name): m for m in tar.getmembers()}
        for name in FILES:
            # the package stores the files with their official names
            member = members.get(name) or members.get(name + ".gz")
            if member is None:
                print(f"  {name} not found in package")
                return False
            data = tar.extractfile(member).read()
            if member.name.endswith(".gz"):
                data = gzip.decompress(data)
            with open(os.path.join(dest, name), "wb") as f:
                f.write(data)
    os.remove(tarball)
    return True


def main():
    dest = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist")
    os.makedirs(dest, exist_ok=True)
    if have_all(dest):
        print(f"already present in {dest}")
        return 0
    print("trying direct download ...")
    if try_download(dest) and have_all(dest):
        print(f"done -> {dest}")
        return 0
    print("trying npm package ...")
    if try_npm(dest) and have_all(dest):
        print(f"done -> {dest}")
        return 0
    print("could not obtain MNIST; place the four IDX files in", dest)
    return 1


if __name__ == "__main__":
    sys.exit(main())
