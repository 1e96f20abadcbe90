def test_1(values):
    Log.log("Test 1" " executed!")  # concat_string
    return values
# ----------------------------------------------------------------
def test_2(var):
    Log.log(var)
# ----------------------------------------------------------------
def execute_tests():
    values, var_1 = {1, 2, 3}, 3
    Log.log("Current time: {}".format(time.now()))  # call
    Log.log(f"{values}" f" var_1: {var_1}")  # concat_fstring
    if condition:
        values = test_1(values)
    else:
        test_2(var_1)
    Log.log("values: ", values)  # (string, identifier)
    var_2 = var_1 / len(values)
    Log.log("var_2: " + str(var_2))  # binary_operator
    assert var_2 == 1.0
# ----------------------------------------------------------------
def main():
    Log.log("Prepare testing...")  # string
    execute_tests()
    Log.log(f"Test end {time.now()}")  # fstring
