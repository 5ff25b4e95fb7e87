"""
Level Hashing Layout
Byte layout, hash functions and instruction-site names of the level hashing
store (see docs/layout.md)
"""

import struct
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

from pmem.trace_model import LINE_SIZE

MASK64 = (1 << 64) - 1
SEED1 = 0x9E3779B97F4A7C15
SEED2 = 0xC2B2AE3D27D4EB4F

MAGIC = b"LVLHASH\x01"
HEADER_FORMAT = "<8sQQQQQ16x"
HEADER_LINES = 3
ROOT_OFFSET = HEADER_LINES * LINE_SIZE
ROOT_MAGIC = b"LHROOT\x00\x00"
LAYOUT_VERSION = 1
META_SIZE = ROOT_OFFSET + LINE_SIZE

SLOTS_PER_BUCKET = 4
SLOT_SIZE = 16
BUCKET_SIZE = 2 * LINE_SIZE
MAX_LEVEL = 24


class Level(str, Enum):
    TOP = "top"
    BOTTOM = "bottom"


# Instruction sites, named after the store's source lines
SITE_LINES: Dict[str, int] = {
    "init_header": 58,
    "init_root": 61,
    "init_flush": 63,
    "flush_header": 64,
    "init_fence": 66,
    "insert_slot": 101,
    "insert_slot_flush": 104,
    "clwb_range": 105,
    "insert_slot_fence": 106,
    "insert_token": 108,
    "insert_token_flush": 109,
    "insert_token_fence": 110,
    "extra_fence": 112,
    "move_copy": 141,
    "move_copy_flush": 142,
    "move_copy_fence": 143,
    "move_dest_token": 145,
    "move_dest_token_flush": 146,
    "move_dest_token_fence": 147,
    "move_src_token": 149,
    "move_src_token_flush": 150,
    "move_src_token_fence": 151,
    "delete_token": 188,
    "delete_token_flush": 189,
    "delete_token_fence": 190,
    "rehash_slot": 231,
    "rehash_slot_flush": 232,
    "rehash_slot_fence": 233,
    "rehash_token": 235,
    "rehash_token_flush": 236,
    "rehash_token_fence": 237,
    "resize_header": 252,
    "resize_header_flush": 253,
    "resize_header_fence": 255,
}

SOURCE_FILE = "level_hashing.c"


def site(name: str, variant: int = 0) -> str:
    """Site string of a named instruction; variants tell repeated bug copies apart"""
    base = f"{SOURCE_FILE}:{SITE_LINES[name]}"
    return base if variant == 0 else f"{base}@{variant}"


def site_name(site_str: str) -> Optional[str]:
    """Inverse of site(): the instruction name, ignoring any variant"""
    head = site_str.split("@", 1)[0]
    for name, line in SITE_LINES.items():
        if head == f"{SOURCE_FILE}:{line}":
            return name
    return None


def hash_key(key: int, seed: int) -> int:
    """Multiply-shift hash: the high 32 bits of the low 64 bits of key * seed"""
    return ((key * seed) & MASK64) >> 32


def top_count(level: int) -> int:
    return 1 << level


def bottom_count(level: int) -> int:
    return 1 << (level - 1)


def top_index(key: int, seed: int, level: int) -> int:
    return hash_key(key, seed) & (top_count(level) - 1)


def bottom_index(key: int, seed: int, level: int) -> int:
    return hash_key(key, seed) & (bottom_count(level) - 1)


def candidates(key: int, level: int, seeds: Tuple[int, int] = (SEED1, SEED2)) -> List[Tuple[Level, int]]:
    """Candidate buckets in probe order, duplicates removed"""
    seed1, seed2 = seeds
    ordered = [
        (Level.TOP, top_index(key, seed1, level)),
        (Level.TOP, top_index(key, seed2, level)),
        (Level.BOTTOM, bottom_index(key, seed1, level)),
        (Level.BOTTOM, bottom_index(key, seed2, level)),
    ]
    return list(dict.fromkeys(ordered))


def alternate(key: int, level_kind: Level, index: int, level: int,
              seeds: Tuple[int, int] = (SEED1, SEED2)) -> Optional[int]:
    """The other same-level bucket of key, or None when both hashes agree"""
    pick = top_index if level_kind == Level.TOP else bottom_index
    first, second = pick(key, seeds[0], level), pick(key, seeds[1], level)
    if first == second:
        return None
    return second if index == first else first


def bucket_addr(base: int, index: int) -> int:
    return base + index * BUCKET_SIZE


def token_addr(bucket: int) -> int:
    return bucket


def slot_line(bucket: int) -> int:
    return bucket + LINE_SIZE


def slot_addr(bucket: int, slot: int) -> int:
    return bucket + LINE_SIZE + slot * SLOT_SIZE


def pack_header(level: int, top_base: int, bottom_base: int,
                seeds: Tuple[int, int] = (SEED1, SEED2)) -> bytes:
    return struct.pack(HEADER_FORMAT, MAGIC, level, seeds[0], seeds[1], top_base, bottom_base)


def unpack_header(line: bytes) -> Tuple[bytes, int, int, int, int, int]:
    """(magic, level, seed1, seed2, top_base, bottom_base)"""
    return struct.unpack(HEADER_FORMAT, line)


def pack_root() -> bytes:
    return ROOT_MAGIC + struct.pack("<Q", LAYOUT_VERSION)


def pack_slot(key: int, value: int) -> bytes:
    return struct.pack("<QQ", key, value)


def unpack_slots(line: bytes) -> List[Tuple[int, int]]:
    return [struct.unpack_from("<QQ", line, i * SLOT_SIZE) for i in range(SLOTS_PER_BUCKET)]


def read_line(image: Mapping[int, bytes], addr: int) -> bytes:
    return image.get(addr, bytes(LINE_SIZE))
