raw = reader.read()
cleaned = str(raw).strip()
print(cleaned)
