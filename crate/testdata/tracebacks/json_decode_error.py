import json

data = json.loads("not json")
print(data)
