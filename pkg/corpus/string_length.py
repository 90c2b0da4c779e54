size = len(text)
if size == 0:
    print("empty")
else:
    print(size)
