"""Independent reference for the chunk boundary rule and tree root ids.

Regenerates the golden files next to this script:

    python3 oracle.py
"""
import hashlib
import struct
from pathlib import Path

MASK = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
HERE = Path(__file__).parent


def fnv1a(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK
    return h


def mix64(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK
    return h ^ (h >> 33)


def window_hash(keys) -> int:
    return fnv1a(b"".join(struct.pack("<I", len(k)) + k for k in keys))


def spans(keys, mode, target, w=4, lo=None, hi=None):
    """Span lengths, scanning left to right."""
    lo = max(1, target // 4) if lo is None else lo
    hi = target * 4 if hi is None else hi
    out, n, window = [], 0, []
    for k in keys:
        n += 1
        if mode == "capacity":
            close = n >= target
        else:
            window = (window + [k])[-w:]
            close = n >= hi or (n >= lo and mix64(window_hash(window)) % target == 0)
        if close:
            out.append(n)
            n, window = 0, []
    if n:
        out.append(n)
    return out


def int_key(i: int) -> bytes:
    return struct.pack(">Q", (i + (1 << 63)) & MASK)


def chunk_id(payload: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + payload).digest()


def leaf(entries) -> bytes:
    out = b"LDK1" + struct.pack("<I", len(entries))
    for k, v in entries:
        out += struct.pack("<I", len(k)) + k + struct.pack("<I", len(v)) + v
    return out


def interior(level, children) -> bytes:
    out = b"LDI1" + bytes([level]) + struct.pack("<I", len(children))
    for key, cid, count in children:
        out += struct.pack("<I", len(key)) + key + cid + struct.pack("<Q", count)
    return out


def cut(items, keys, mode, target):
    res, i = [], 0
    for n in spans(keys, mode, target):
        res.append(items[i : i + n])
        i += n
    return res


def tree_root(entries, mode, target) -> str:
    level_refs = []
    for group in cut(entries, [k for k, _ in entries], mode, target):
        level_refs.append((group[-1][0], chunk_id(leaf(group)), len(group)))
    level = 1
    while len(level_refs) > 1:
        nxt = []
        for group in cut(level_refs, [r[0] for r in level_refs], mode, target):
            nxt.append((group[-1][0], chunk_id(interior(level, group)), sum(r[2] for r in group)))
        level_refs = nxt
        level += 1
    return level_refs[0][1].hex()


def main():
    keys = [int_key(i) for i in range(1000)]
    content = spans(keys, "content", 64)
    (HERE / "content_spans_1000.txt").write_text("\n".join(map(str, content)) + "\n")

    single = [(bytes([i]) * (i % 9), fnv1a(struct.pack("<I", i % 9) + bytes([i]) * (i % 9))) for i in range(32)]
    (HERE / "fnv_single_key.txt").write_text("".join(f"{k.hex()}\t{h:016x}\n" for k, h in single))

    entries = [(struct.pack(">Q", i), f"v{i}".encode()) for i in range(10_000)]
    lines = [f"{mode}\t{t}\t{tree_root(entries, mode, t)}" for mode, t in (("content", 64), ("capacity", 64), ("content", 16))]
    (HERE / "raw_tree_roots.txt").write_text("\n".join(lines) + "\n")

    mean = sum(content) / len(content)
    print(f"content spans: {len(content)} spans, mean {mean:.1f}")


if __name__ == "__main__":
    main()
