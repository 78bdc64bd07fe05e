"""Independent parameter count for the 1D UNet layout.

Walks the architecture description directly (no shared code with the C++ engine):
time MLP, input conv, down path, two middle blocks, up path with skip
concatenation, output norm and conv.
"""
import sys


def groupnorm(c):
    return 2 * c


def conv(cin, cout, k=3):
    return cout * cin * k + cout


def linear(i, o):
    return o * i + o


def resblock(cin, cout, temb):
    n = groupnorm(cin) + conv(cin, cout) + linear(temb, cout) + groupnorm(cout) + conv(cout, cout)
    if cin != cout:
        n += conv(cin, cout, 1)
    return n


def count(c0, mults, blocks, temb):
    total = linear(c0, temb) + linear(temb, temb) + conv(2, c0)
    skips = [c0]
    ch = c0
    for i, m in enumerate(mults):
        for _ in range(blocks):
            total += resblock(ch, c0 * m, temb)
            ch = c0 * m
            skips.append(ch)
        if i != len(mults) - 1:
            total += conv(ch, ch)
            skips.append(ch)
    total += 2 * resblock(ch, ch, temb)
    for i in reversed(range(len(mults))):
        for _ in range(blocks + 1):
            total += resblock(ch + skips.pop(), c0 * mults[i], temb)
            ch = c0 * mults[i]
        if i != 0:
            total += conv(ch, ch)
    total += groupnorm(ch) + conv(ch, 1)
    assert not skips
    return total


if __name__ == "__main__":
    print("paper", count(32, [1, 2, 4, 8], 2, 128))
    print("desk", count(16, [1, 2, 4], 1, 64))
    print("tiny", count(4, [1, 2], 1, 8))
    if len(sys.argv) > 1:
        print(count(int(sys.argv[1]), [int(x) for x in sys.argv[2].split(",")], int(sys.argv[3]), int(sys.argv[4])))
