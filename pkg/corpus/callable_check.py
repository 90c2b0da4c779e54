result = compute(3, 4)
if result:
    outcome = "truthy"
else:
    outcome = "falsy"
print(outcome)
