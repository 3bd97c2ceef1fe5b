"""Regenerates the AKV fixtures with the struct module's own binary16 packing."""
import struct


def akv(dims, values, magic=b"AKV1", version=1, dtype=1):
    out = magic + struct.pack("<BBH", version, dtype, 0)
    out += struct.pack("<I", len(dims)) + struct.pack("<%dI" % len(dims), *dims)
    return out + struct.pack("<%de" % len(values), *values)


matrix = [1.0, -2.5, 0.0, 65504.0, 2.0 ** -24, -0.0]
vector = [0.099975586, -0.333251953, 3.140625, 1024.0]

files = {
    "golden_2x3.akv": akv([2, 3], matrix),
    "golden_q4.akv": akv([4], vector),
    "bad_magic.akv": akv([2, 3], matrix, magic=b"AKV2"),
    "truncated.akv": akv([2, 3], matrix)[:-3],
}
for name, data in files.items():
    with open(name, "wb") as f:
        f.write(data)
