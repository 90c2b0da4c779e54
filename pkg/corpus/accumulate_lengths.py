total = 0
for chunk in pieces:
    total = total + len(str(chunk))
print(total)
