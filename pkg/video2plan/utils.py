# License: BSD 2 clause

import hashlib
import json
import time


def ts():
    return time.ctime(time.time())


def sha256_file(path, block_size=1 << 16):
    """Hex digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(block_size), b""):
            digest.update(block)
    return digest.hexdigest()


def iter_jsonl(path):
    """Iterate over the non-blank lines of a JSON-lines file.

    Parameters
    ----------
    path: str or path-like
        File to read (UTF-8).

    Yields
    ------
    (line_number, text) pairs, with 1-based line numbers. Decoding is left to
    the caller so that it can attach the line number to its own errors.
    """
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            text = line.strip()
            if text:
                yield line_number, text


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=False))
            handle.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def write_json(document, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(document, handle, indent=2, sort_keys=True)
        handle.write("\n")
