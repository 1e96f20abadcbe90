class Log:
    @staticmethod
    def log(*args):
        print("[INFO]", *args)


class time:
    @staticmethod
    def now():
        return "19:42:37"


condition = True
