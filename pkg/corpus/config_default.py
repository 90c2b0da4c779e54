data = config.get("key")
if data is None:
    data = "default"
print(data)
