table = {}
try:
    v = table["k"]
except KeyError:
    raise ValueError("missing key k")
