if divisor:
    ratio = 100 // int(divisor)
else:
    ratio = 0
print(ratio)
