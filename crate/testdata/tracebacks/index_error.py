values = [3, 1, 4]
total = 0
for i in range(4):
    total += values[i]
print(total)
