parts = path.split("/")
tail = parts[-1]
print(tail)
