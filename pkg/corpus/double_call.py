first = step()
second = step()
print(first is second)
