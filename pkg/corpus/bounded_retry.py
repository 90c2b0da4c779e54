attempts = 0
while attempts < limit:
    attempts = attempts + 1
print(attempts)
