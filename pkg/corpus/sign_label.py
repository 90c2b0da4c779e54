if number > 0:
    label = "positive"
else:
    label = "non-positive"
print(label)
