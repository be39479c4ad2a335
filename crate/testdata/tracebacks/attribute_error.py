items = None
items.append(1)
