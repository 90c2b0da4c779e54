frame = loader.fetch(limit)
if frame.empty:
    total = 0
else:
    total = frame.size
print(total)
