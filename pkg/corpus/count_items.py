count = 0
for item in items:
    count = count + 1
print(count)
