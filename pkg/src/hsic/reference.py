"""Published per-class split sizes for the Indian Pines scene (25/25/50 protocol).

Each entry is ``(class name, train, val, test)``; a class's pixel count is the
sum of the three.
"""

INDIAN_PINES_SPLIT = (
    ("Alfalfa", 11, 12, 23),
    ("Corn-notill", 357, 357, 714),
    ("Corn-mintill", 207, 208, 415),
    ("Corn", 59, 59, 118),
    ("Grass-pasture", 121, 121, 242),
    ("Grass-trees", 182, 183, 365),
    ("Grass-mowed", 7, 7, 14),
    ("Hay-windrowed", 119, 120, 239),
    ("Oats", 5, 5, 10),
    ("Soybean-notill", 243, 243, 486),
    ("Soybean-mintill", 614, 614, 1228),
    ("Soybean-clean", 148, 149, 297),
    ("Wheat", 51, 51, 102),
    ("Woods", 316, 317, 633),
    ("Buildings", 96, 97, 193),
    ("Stone-Steel", 23, 23, 46),
)


def indian_pines_class_sizes() -> list[int]:
    return [tr + va + te for _, tr, va, te in INDIAN_PINES_SPLIT]
