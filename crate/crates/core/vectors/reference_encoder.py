#!/usr/bin/env python3
"""Independent reference encoder for the golden vectors in this directory.

Builds BPv7 bundles (RFC 9171 block layout) and BIBE PDUs byte by byte with a
hand-written CBOR head encoder and bitwise CRC routines. It shares no code with
the Rust codec; rerun it to regenerate the .hex files.
"""
import pathlib


def head(major, value):
    if value < 24:
        return bytes([(major << 5) | value])
    for ai, width in ((24, 1), (25, 2), (26, 4), (27, 8)):
        if value < (1 << (8 * width)):
            return bytes([(major << 5) | ai]) + value.to_bytes(width, "big")
    raise ValueError(value)


def uint(v):
    return head(0, v)


def bstr(b):
    return head(2, len(b)) + b


def tstr(s):
    b = s.encode()
    return head(3, len(b)) + b


def array(items):
    return head(4, len(items)) + b"".join(items)


def crc16_x25(data):
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0x8408 if crc & 1 else crc >> 1
    return (crc ^ 0xFFFF).to_bytes(2, "big")


def crc32c(data):
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0x82F63B78 if crc & 1 else crc >> 1
    return (crc ^ 0xFFFFFFFF).to_bytes(4, "big")


def eid(text):
    if text == "dtn:none":
        return array([uint(1), uint(0)])
    if text.startswith("dtn:"):
        return array([uint(1), tstr(text[4:])])
    node, service = text[4:].split(".")
    return array([uint(2), array([uint(int(node)), uint(int(service))])])


def with_crc(fields, crc_type):
    if crc_type == 0:
        return array(fields)
    width, fn = {1: (2, crc16_x25), 2: (4, crc32c)}[crc_type]
    zeroed = array(fields + [bstr(bytes(width))])
    return array(fields + [bstr(fn(zeroed))])


def bundle(dest, src, report_to, created_ms, seq, lifetime, payload, crc_type, flags=0):
    primary = with_crc(
        [uint(7), uint(flags), uint(crc_type), eid(dest), eid(src), eid(report_to),
         array([uint(created_ms), uint(seq)]), uint(lifetime)],
        crc_type,
    )
    payload_block = with_crc([uint(1), uint(1), uint(0), uint(crc_type), bstr(payload)], crc_type)
    return b"\x9f" + primary + payload_block + b"\xff"


def bpdu(inner, transmission_id=0, retransmission_time=0):
    return array([uint(transmission_id), uint(retransmission_time), bstr(inner)])


def main():
    out = pathlib.Path(__file__).parent
    assert crc16_x25(b"123456789") == bytes.fromhex("906e")
    assert crc32c(b"123456789") == bytes.fromhex("e3069283")

    cmd = bundle("ipn:2.0", "ipn:1.0", "dtn:none", 750_000_000_000, 0, 86_400_000, b"cmd", 2)
    vectors = {
        "bundle_ipn_cmd_crc32c": cmd,
        "bundle_dtn_crc16": bundle(
            "dtn://lower3.dtn", "dtn://lower1.dtn", "dtn://lower1.dtn",
            750_000_000_123, 7, 3_600_000, bytes(range(16)), 1, flags=0x4,
        ),
        "bundle_empty_nocrc": bundle("ipn:2.1", "ipn:1.0", "ipn:1.0", 1, 0, 1000, b"", 0),
        "bpdu_fig1": bpdu(cmd),
        "bundle_fig1_outer": bundle(
            "dtn://lower3.dtn", "dtn://lower1.dtn", "dtn:none",
            750_000_000_000, 0, 86_400_000, bpdu(cmd), 2,
        ),
    }
    for name, data in vectors.items():
        (out / f"{name}.hex").write_text(data.hex() + "\n")


if __name__ == "__main__":
    main()
