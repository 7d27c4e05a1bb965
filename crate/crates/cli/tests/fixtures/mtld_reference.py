"""Reference MTLD used to produce the expected column of mtld_20.tsv.

Run with: python3 mtld_reference.py > mtld_20.tsv
"""

THRESHOLD = 0.72

TEXTS = [
    ("repeat100", " ".join(["data"] * 100)),
    ("all_unique", " ".join(f"w{i}" for i in range(40))),
    ("single", "privacy"),
    ("pair_same", "leak leak"),
    ("palindrome", "a b c d c b a"),
    ("exact_threshold", " ".join([f"t{i}" for i in range(18)] + ["t0"] * 7)),
    ("review_pb", "app leak location contact stranger without ask permission leak location again"),
    ("review_pfr", "please add option hide location please add option restrict contact please"),
    ("review_pir", "graphic smooth level fun music relax level fun graphic smooth"),
    ("alternating", " ".join(["x", "y"] * 30)),
    ("cycle5", " ".join(["a", "b", "c", "d", "e"] * 12)),
    ("cycle7", " ".join(["p", "q", "r", "s", "t", "u", "v"] * 9)),
    ("growing", " ".join(f"g{i // 3}" for i in range(60))),
    ("front_loaded", " ".join([f"u{i}" for i in range(20)] + ["same"] * 20)),
    ("back_loaded", " ".join(["same"] * 20 + [f"u{i}" for i in range(20)])),
    ("sentence", "the app asks for my location the app asks for my contacts and the app asks for my photos"),
    ("mixed_case_kept", "Data data DATA data Data"),
    ("long_text", " ".join(f"k{(i * 7) % 23}" for i in range(150))),
    ("two_types", "yes no yes yes no no yes no yes"),
    ("near_unique", " ".join([f"n{i}" for i in range(30)] + ["n0", "n1"])),
]


def one_direction(words, threshold):
    factor_count = 0.0
    segment = []
    seen = set()
    ratio = 1.0
    for w in words:
        segment.append(w)
        seen.add(w)
        ratio = len(seen) / len(segment)
        if ratio < threshold:
            factor_count += 1
            segment = []
            seen = set()
            ratio = 1.0
    if segment:
        factor_count += (1 - ratio) / (1 - threshold)
    return len(words) if factor_count == 0 else len(words) / factor_count


def mtld(words, threshold=THRESHOLD):
    return 0.5 * (one_direction(words, threshold) + one_direction(list(reversed(words)), threshold))


if __name__ == "__main__":
    print("name\texpected\ttokens")
    for name, text in TEXTS:
        print(f"{name}\t{mtld(text.split())!r}\t{text}")
