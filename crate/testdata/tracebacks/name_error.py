n = 5
result = n * factor
print(result)
