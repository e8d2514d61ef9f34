#pragma once

// Shared GSM8K-format fixture records used by the unit and acceptance suites.

#include "cotforge/corpus.hpp"

namespace fixtures {

inline cotforge::RawGsm8kRecord natalia() {
    return {"Natalia sold clips to 48 of her friends in April, and then she sold half as many "
            "clips in May. How many clips did Natalia sell altogether in April and May?",
            "Natalia sold 48/2 = <<48/2=24>>24 clips in May. Natalia sold 48+24 = "
            "<<48+24=72>>72 clips altogether in April and May. #### 72"};
}

inline cotforge::RawGsm8kRecord piggy_bank() {
    return {"John puts $25 in his piggy bank every month for 2 years to save up for a vacation. "
            "He had to spend $400 from his piggy bank savings last week to repair his car. How "
            "many dollars are left in his piggy bank?",
            "He saved money for 2 years, which is equal to 12 x 2 = <<12*2=24>>24 months. The "
            "amount of money he saved is $25*24 = $<<25*24=600>>600. But he spent some money so "
            "there is $600 - $400 = <<600-400=200>>200 left. #### 200."};
}

inline cotforge::RawGsm8kRecord coaster_vans() {
    return {"Five coaster vans are used to transport students for their field trip. Each van "
            "carries 28 students, 60 of which are boys. How many are girls?",
            "There are a total of 5 vans x 28 students = <<5*28=140>>140 students. If 60 are "
            "boys, then 140 - 60 = <<140-60=80>>80 of these students are girls. #### 80"};
}

}  // namespace fixtures
