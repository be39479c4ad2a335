raw = "12a"
n = int(raw)
print(n)
