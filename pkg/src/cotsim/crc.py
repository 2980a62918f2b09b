"""CRC-16-CCITT (XMODEM variant): poly 0x1021, init 0x0000, unreflected."""

CRC16_POLY = 0x1021
CRC16_INIT = 0x0000


def _build_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ CRC16_POLY) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_TABLE = _build_table()


def crc16_ccitt(data: bytes, init: int = CRC16_INIT) -> int:
    """MSB-first CRC over `data`, no input/output reflection, no final XOR."""
    crc = init
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _TABLE[(crc >> 8) ^ b]
    return crc
