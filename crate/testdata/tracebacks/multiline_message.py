def check(v):
    if v < 0:
        raise ValueError("negative input\nexpected v >= 0")
    return v


check(-1)
